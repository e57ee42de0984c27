#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"

#include "gazesynth/calibration.hpp"
#include "gazesynth/error.hpp"

using namespace gazesynth;
namespace fs = std::filesystem;

namespace {

std::vector<Pixel> grid(int cols, int rows, double u0, double u1, double v0, double v1) {
  std::vector<Pixel> out;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      out.push_back({u0 + (u1 - u0) * c / (cols - 1), v0 + (v1 - v0) * r / (rows - 1)});
  return out;
}

std::vector<PerceptionPair> pairs_through(const DistortionField& field, const std::vector<Pixel>& cmds,
                                          double sigma = 0.0, unsigned seed = 1) {
  std::mt19937_64 rng(seed);
  std::vector<PerceptionPair> out;
  for (const Pixel& c : cmds) out.push_back({c, simulate_perceiver(field, c, sigma, rng), "sim", 0.0});
  return out;
}

double rms_heldout(const CorrectionModel& m, const DistortionField& field, const std::vector<Pixel>& pts) {
  double sum = 0.0;
  for (const Pixel& p : pts) {
    const Pixel seen = apply_field(field, apply_correction(m, p).command);
    sum += (seen.vec() - p.vec()).squaredNorm();
  }
  return std::sqrt(sum / pts.size());
}

double rms_raw(const DistortionField& field, const std::vector<Pixel>& pts) {
  double sum = 0.0;
  for (const Pixel& p : pts) sum += (apply_field(field, p).vec() - p.vec()).squaredNorm();
  return std::sqrt(sum / pts.size());
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("gazesynth_calib_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

const AffineField kGain{1.3, 0.0, -20.0, 0.0, 1.0, 0.0};

}  // namespace

TEST_CASE("record_pair examples") {
  CalibrationSession s(PlaneBounds{1440.0, 1080.0});
  const PerceptionPair& a = s.record_pair({160, 180}, {160, 180}, "op");
  CHECK(a.deviation() == Vec2(0, 0));
  const PerceptionPair& b = s.record_pair({100, 180}, {130, 180}, "op");
  CHECK(b.deviation() == Vec2(30, 0));
  try {
    s.record_pair({100, 180}, {-5, 180}, "op");
    FAIL("perceived outside the plane");
  } catch (const GazeError& e) {
    CHECK(e.code() == ErrorCode::OutOfBounds);
  }
  CHECK(s.pairs().size() == 2);
}

TEST_CASE("session log is append-only and replays") {
  TempDir dir;
  const fs::path log = dir.path / "pairs.jsonl";
  double clock = 0.0;
  {
    CalibrationSession s(PlaneBounds{}, log, [&] { return clock += 1.5; });
    s.record_pair({100, 100}, {110, 100}, "a");
    s.record_pair({200, 300}, {210, 305}, "b");
  }
  CalibrationSession r = CalibrationSession::load(log, PlaneBounds{}, [&] { return clock += 1.5; });
  REQUIRE(r.pairs().size() == 2);
  CHECK(r.pairs()[1].perceived.v == 305.0);
  CHECK(r.pairs()[1].observer_id == "b");
  CHECK(r.pairs()[0].timestamp == 1.5);
  r.record_pair({300, 300}, {300, 300}, "c");
  CHECK(read_pair_log(log).size() == 3);

  std::ofstream(log, std::ios::app) << "{not json\n";
  try {
    read_pair_log(log);
    FAIL("corrupt line");
  } catch (const GazeError& e) {
    CHECK(e.code() == ErrorCode::ParseError);
    CHECK(std::string(e.what()).find("4") != std::string::npos);
  }
}

TEST_CASE("monomial basis order") {
  const auto b = monomial_basis(3);
  const std::vector<MonomialTerm> expected{{0, 0}, {1, 0}, {0, 1}, {2, 0}, {1, 1},
                                           {0, 2}, {3, 0}, {2, 1}, {1, 2}, {0, 3}};
  CHECK(b == expected);
  CHECK(monomial_basis(1).size() == 3);
  CHECK(monomial_basis(0).size() == 1);
  CHECK_THROWS_AS(monomial_basis(-1), GazeError);
  CHECK_THROWS_AS(monomial_basis(4), GazeError);
}

TEST_CASE("identity pairs on a 3x3 grid give an identity model") {
  const auto cmds = grid(3, 3, 100, 1300, 100, 900);
  const CorrectionModel m = fit_correction(pairs_through(IdentityField{}, cmds));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(100, 1300), v(100, 900);
  for (int i = 0; i < 100; ++i) {
    const Pixel p{u(rng), v(rng)};
    const Pixel c = apply_correction(m, p).command;
    CHECK(std::abs(c.u - p.u) < 1e-9);
    CHECK(std::abs(c.v - p.v) < 1e-9);
  }
  CHECK(m.fit_stats.pre_rms == 0.0);
  CHECK(m.fit_stats.post_rms < 1e-9);
}

TEST_CASE("constant +10 px offset is removed") {
  const auto cmds = grid(3, 3, 100, 1300, 100, 900);
  const auto pairs = pairs_through(AffineField{1, 0, 10, 0, 1, 0}, cmds);
  const CorrectionModel m = fit_correction(pairs);
  const Pixel c = apply_correction(m, {150, 180}).command;
  CHECK(c.u == doctest::Approx(140.0).epsilon(1e-12));
  CHECK(c.v == doctest::Approx(180.0).epsilon(1e-12));
  CHECK(m.fit_stats.pre_rms == doctest::Approx(10.0));
  CHECK(m.fit_stats.post_rms < 1e-9);
  CHECK(perception_error(pairs, &m) < 1e-6);
}

TEST_CASE("affine field on a 5x5 grid: held-out residual below 1e-6 px") {
  const auto cmds = grid(5, 5, 100, 1100, 100, 980);
  const CorrectionModel m = fit_correction(pairs_through(kGain, cmds));
  const auto held = grid(4, 4, 200, 1000, 200, 900);
  CHECK(rms_heldout(m, kGain, held) < 1e-6);
  CHECK(rms_heldout(m, kGain, held) <= 1e-3 * rms_raw(kGain, held));
}

TEST_CASE("closed loop holds for random affine fields on a 4x4 grid") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> gain(0.8, 1.3), shear(-0.15, 0.15), off(-40.0, 40.0);
  const auto cmds = grid(4, 4, 150, 1250, 150, 930);
  const auto held = grid(5, 5, 250, 1150, 250, 830);
  for (int k = 0; k < 50; ++k) {
    const AffineField f{gain(rng), shear(rng), off(rng), shear(rng), gain(rng), off(rng)};
    const CorrectionModel m = fit_correction(pairs_through(f, cmds));
    CHECK(rms_heldout(m, f, held) <= 1e-3 * rms_raw(f, held));
  }
}

TEST_CASE("noisy fields stay within 2 sigma on held-out points") {
  const auto cmds = grid(5, 5, 100, 1100, 100, 980);
  const auto held = grid(4, 4, 200, 1000, 200, 900);
  for (double sigma : {0.5, 1.0, 2.0}) {
    for (unsigned seed = 1; seed <= 20; ++seed) {
      const CorrectionModel m = fit_correction(pairs_through(kGain, cmds, sigma, seed));
      CHECK(rms_heldout(m, kGain, held) <= 2.0 * sigma);
    }
  }
}

TEST_CASE("fit is bit-deterministic") {
  const auto pairs = pairs_through(RadialField{0.05, 720, 540, 720}, grid(6, 6, 50, 1390, 50, 1030), 1.0, 9);
  const CorrectionModel a = fit_correction(pairs);
  const CorrectionModel b = fit_correction(pairs);
  CHECK(a.terms == b.terms);
  CHECK(a.coef_u == b.coef_u);
  CHECK(a.coef_v == b.coef_v);
}

TEST_CASE("fit preconditions") {
  const auto cmds = grid(3, 3, 100, 1300, 100, 900);
  auto pairs = pairs_through(IdentityField{}, cmds);
  try {
    fit_correction(std::span(pairs).first(8));
    FAIL("eight pairs");
  } catch (const GazeError& e) {
    CHECK(e.code() == ErrorCode::InsufficientPairs);
  }
  std::vector<PerceptionPair> same(9, PerceptionPair{{300, 300}, {300, 300}, "x", 0.0});
  try {
    fit_correction(same);
    FAIL("all at one point");
  } catch (const GazeError& e) {
    CHECK(e.code() == ErrorCode::RankDeficient);
  }
  std::vector<PerceptionPair> line;
  for (int i = 0; i < 9; ++i) line.push_back({{100.0 + 50 * i, 200.0 + 25 * i}, {100.0 + 50 * i, 200.0 + 25 * i}, "x", 0.0});
  try {
    fit_correction(line);
    FAIL("collinear");
  } catch (const GazeError& e) {
    CHECK(e.code() == ErrorCode::RankDeficient);
  }
  CorrectionConfig cfg;
  cfg.min_pairs = 3;
  CHECK_NOTHROW(fit_correction(std::span(pairs).first(4), cfg));
}

TEST_CASE("penalty controls model size") {
  const auto pairs = pairs_through(kGain, grid(5, 5, 100, 1100, 100, 980), 2.0, 4);
  CorrectionConfig loose, strict;
  loose.selection_penalty = 0.0;
  strict.selection_penalty = 1e12;
  const CorrectionModel big = fit_correction(pairs, loose);
  const CorrectionModel small = fit_correction(pairs, strict);
  CHECK(big.terms.size() >= small.terms.size());
  CHECK(big.fit_stats.post_rms <= small.fit_stats.post_rms + 1e-12);
  CHECK(!small.terms.empty());
}

TEST_CASE("duplicate pair keeps an exact fit exact") {
  // With a field inside the model class the training residual is zero and a
  // duplicate cannot raise it. (For inexact fits it can; see README.)
  const auto cmds = grid(4, 4, 100, 1300, 100, 900);
  auto pairs = pairs_through(kGain, cmds);
  const double before = fit_correction(pairs).fit_stats.post_rms;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto dup = pairs;
    dup.push_back(pairs[i]);
    CHECK(fit_correction(dup).fit_stats.post_rms <= before + 1e-9);
  }
}

TEST_CASE("extrapolation flag") {
  const auto cmds = grid(3, 3, 400, 1000, 300, 700);
  const CorrectionModel m = fit_correction(pairs_through(IdentityField{}, cmds));
  CHECK_FALSE(apply_correction(m, {700, 500}).extrapolated);
  CHECK_FALSE(apply_correction(m, {400, 300}).extrapolated);
  const CorrectedCommand far = apply_correction(m, {20, 20});
  CHECK(far.extrapolated);
  CHECK(std::abs(far.command.u - 20.0) < 1e-6);
  CHECK_FALSE(apply_correction(CorrectionModel::identity(), {20, 20}).extrapolated);
}

TEST_CASE("batch apply matches single apply") {
  const CorrectionModel m = fit_correction(
      pairs_through(RadialField{0.08, 720, 540, 720}, grid(5, 5, 50, 1390, 50, 1030)));
  std::vector<Pixel> in, out(37);
  for (int i = 0; i < 37; ++i) in.push_back({30.0 * i, 25.0 * i});
  apply_correction_batch(m, in, out);
  for (int i = 0; i < 37; ++i) {
    const Pixel s = apply_correction(m, in[i]).command;
    CHECK(s.u == out[i].u);
    CHECK(s.v == out[i].v);
  }
}

TEST_CASE("perception_error examples") {
  std::vector<PerceptionPair> one{{{100, 100}, {103, 104}, "x", 0.0}};
  CHECK(perception_error(one) == 5.0);
  const auto ident = pairs_through(IdentityField{}, grid(3, 3, 100, 1300, 100, 900));
  CHECK(perception_error(ident) == 0.0);
  CHECK_THROWS_AS(perception_error(std::vector<PerceptionPair>{}), GazeError);
  // Zero iff every pair is exact.
  auto mixed = ident;
  mixed[4].perceived.u += 1e-9;
  CHECK(perception_error(mixed) > 0.0);
}

TEST_CASE("cross validation report") {
  const auto pairs = pairs_through(kGain, grid(5, 5, 100, 1100, 100, 980), 1.0, 2);
  const CorrectionModel m = fit_correction(pairs);
  const CalibrationReport r = validate_correction(pairs, m, {}, 5);
  CHECK(r.folds == 5);
  CHECK(r.fold_rms.size() == 5);
  CHECK(r.residuals.size() == pairs.size());
  CHECK(r.post_rms >= 0.0);
  CHECK(r.post_rms < r.pre_rms);
  CHECK(r.heldout_rms < 4.0);
  CHECK_THROWS_AS(validate_correction(pairs, m, {}, 1), GazeError);
}

TEST_CASE("simulate_perceiver examples") {
  std::mt19937_64 rng(5);
  CHECK(simulate_perceiver(IdentityField{}, {321, 123}, 0.0, rng) == Pixel{321, 123});
  CHECK(simulate_perceiver(kGain, {200, 50}, 0.0, rng).u == doctest::Approx(240.0).epsilon(1e-15));

  std::mt19937_64 noisy(99);
  std::vector<double> du;
  for (int i = 0; i < 1000; ++i) du.push_back(simulate_perceiver(IdentityField{}, {500, 500}, 2.0, noisy).u - 500.0);
  double mean = 0.0;
  for (double x : du) mean += x;
  mean /= du.size();
  double var = 0.0;
  for (double x : du) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / (du.size() - 1));
  CHECK(sd >= 1.8);
  CHECK(sd <= 2.2);

  std::mt19937_64 r1(11), r2(11);
  for (int i = 0; i < 20; ++i)
    CHECK(simulate_perceiver(kGain, {400, 400}, 2.0, r1) == simulate_perceiver(kGain, {400, 400}, 2.0, r2));
}

TEST_CASE("radial and grid fields") {
  const RadialField rad{0.1, 720, 540, 100};
  const Pixel p = apply_field(rad, {820, 540});
  CHECK(p.u == doctest::Approx(720 + 100 * 1.1).epsilon(1e-15));
  CHECK(p.v == 540.0);
  CHECK(apply_field(rad, {720, 540}) == Pixel{720, 540});

  GridField g;
  g.origin_u = 0;
  g.origin_v = 0;
  g.spacing_u = 100;
  g.spacing_v = 100;
  g.nx = 2;
  g.ny = 2;
  g.du = {0, 10, 20, 30};
  g.dv = {0, 0, 0, 4};
  CHECK(apply_field(g, {50, 50}).u == doctest::Approx(50 + 15));
  CHECK(apply_field(g, {50, 50}).v == doctest::Approx(50 + 1));
  CHECK(apply_field(g, {100, 0}).u == doctest::Approx(110));
  // Clamped beyond the lattice.
  CHECK(apply_field(g, {500, 500}).u == doctest::Approx(530));

  GridField bad = g;
  bad.du.pop_back();
  CHECK_THROWS_AS(validate_field(bad), GazeError);
  CHECK_THROWS_AS(validate_field(RadialField{0.1, 0, 0, 0}), GazeError);
}

TEST_CASE("convex hull and containment") {
  const auto h = convex_hull({{0, 0}, {10, 0}, {10, 10}, {0, 10}, {5, 5}, {5, 0}});
  CHECK(h.size() == 4);
  CHECK(point_in_hull(h, {5, 5}));
  CHECK(point_in_hull(h, {10, 5}));
  CHECK_FALSE(point_in_hull(h, {10.001, 5}));
  // Counter-clockwise: positive signed area.
  double area = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const Pixel& a = h[i];
    const Pixel& b = h[(i + 1) % h.size()];
    area += a.u * b.v - b.u * a.v;
  }
  CHECK(area > 0.0);
}

TEST_CASE("model validation") {
  CorrectionModel m = CorrectionModel::identity();
  CHECK_NOTHROW(m.validate());
  m.coef_u.pop_back();
  CHECK_THROWS_AS(m.validate(), GazeError);
  CorrectionModel empty;
  CHECK_THROWS_AS(empty.validate(), GazeError);
}
