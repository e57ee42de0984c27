#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <filesystem>
#include <future>
#include <sstream>
#include <thread>

#include "doctest.h"

#include "../support/transcript.hpp"
#include "gazesynth/calibration.hpp"
#include "gazesynth/service.hpp"

using namespace gazesynth;
namespace fs = std::filesystem;

namespace {

Json call(Service& s, std::size_t conn, const std::string& type, Json payload = Json::object(),
          int id = 1) {
  return Json::parse(s.handle(conn, Json{{"type", type}, {"id", id}, {"payload", payload}}.dump()));
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("gazesynth_svc_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void record_grid(Service& s, std::size_t conn, double bias_u) {
  for (double v : {200.0, 540.0, 880.0}) {
    for (double u : {200.0, 720.0, 1240.0}) {
      call(s, conn, "record_pair", {{"commanded", {u, v}}, {"perceived", {u + bias_u, v}}});
    }
  }
}

}  // namespace

TEST_CASE("fixation echo contract") {
  Service s(ServiceConfig::defaults());
  const auto c = s.connect();
  const Json set = call(s, c, "set_fixation_pixel", {{"pixel", {720, 540}}}, 7);
  CHECK(set["type"] == "set_fixation_pixel");
  CHECK(set["id"] == 7);
  CHECK(set["revision"] == 1);
  const Json st = call(s, c, "get_state");
  CHECK(st["revision"] == 1);
  const Json& fx = st["payload"]["fixation"];
  CHECK(fx["pixel"] == Json::array({720.0, 540.0}));
  CHECK(fx["commanded_pixel"] == Json::array({720.0, 540.0}));
  CHECK(fx["corrected"] == false);
  REQUIRE(fx["eyes"].size() == 2);
  CHECK(fx["eyes"][0].contains("rotation"));
  CHECK(st["payload"] == set["payload"]);
}

TEST_CASE("nine pairs then fit reports fit_stats") {
  Service s(ServiceConfig::defaults());
  const auto c = s.connect();
  record_grid(s, c, 30.0);
  const Json fit = call(s, c, "fit_calibration");
  REQUIRE(fit["type"] == "fit_calibration");
  const Json& stats = fit["payload"]["fit_stats"];
  CHECK(stats["pre_rms"].get<double>() == doctest::Approx(30.0));
  CHECK(stats["post_rms"].get<double>() < 1e-6);
  CHECK(stats["pair_count"] == 9);
  const Json applied = call(s, c, "apply_model", {{"pixel", {750, 540}}});
  CHECK(applied["payload"]["command"][0].get<double>() == doctest::Approx(720.0));
  CHECK(applied["payload"]["extrapolated"] == false);
  // apply_model is a query.
  CHECK(applied["revision"] == fit["revision"]);
}

TEST_CASE("errors carry machine-readable codes") {
  Service s(ServiceConfig::defaults());
  const auto c = s.connect();
  auto code = [](const Json& r) { return r["payload"]["code"].get<std::string>(); };
  const Json unknown = call(s, c, "teleport", Json::object(), 3);
  CHECK(unknown["type"] == "error");
  CHECK(unknown["id"] == 3);
  CHECK(code(unknown) == "unknown_type");
  CHECK(code(Json::parse(s.handle(c, "{oops"))) == "malformed");
  CHECK(code(Json::parse(s.handle(c, "[1,2]"))) == "malformed");
  CHECK(code(Json::parse(s.handle(c, R"({"id": 1})"))) == "malformed");
  CHECK(code(Json::parse(s.handle(c, R"({"type": "get_state", "payload": 5})"))) == "malformed");
  CHECK(code(call(s, c, "set_fixation_pixel", {{"pixel", "left"}})) == "invalid_payload");
  CHECK(code(call(s, c, "set_fixation_pixel", {{"pixel", {-10, 5}}})) == "out_of_bounds");
  CHECK(code(call(s, c, "set_fixation_pixel", {{"pixel", {5, 5}}, {"limit_mode", "loose"}})) ==
        "invalid_payload");
  CHECK(code(call(s, c, "apply_model", {{"pixel", {5, 5}}})) == "no_active_model");
  CHECK(code(call(s, c, "record_pair", {{"perceived", {5, 5}}})) == "invalid_payload");
  CHECK(code(call(s, c, "fit_calibration")) == "insufficient_pairs");
  CHECK(code(call(s, c, "load_rig", {{"rig", {{"eyes", Json::array()}}}})) == "invalid_argument");
  CHECK(s.revision() == 0);
  CHECK(call(s, c, "get_state")["payload"]["pair_count"] == 0);
}

TEST_CASE("revision counts accepted mutations") {
  Service s(ServiceConfig::defaults());
  const auto c = s.connect();
  std::uint64_t expected = 0;
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> pick(0, 5);
  std::uniform_real_distribution<double> px(-50.0, 1500.0);
  for (int i = 0; i < 300; ++i) {
    Json r;
    switch (pick(rng)) {
      case 0: r = call(s, c, "get_state"); break;
      case 1: r = call(s, c, "set_fixation_pixel", {{"pixel", {px(rng), px(rng)}}}); break;
      case 2: r = call(s, c, "record_pair", {{"perceived", {px(rng), px(rng)}}}); break;
      case 3: r = call(s, c, "fit_calibration"); break;
      case 4: r = call(s, c, "apply_model", {{"pixel", {px(rng), px(rng)}}}); break;
      default: r = call(s, c, "bogus"); break;
    }
    const bool mutation = r["type"] == "set_fixation_pixel" || r["type"] == "record_pair" ||
                          r["type"] == "fit_calibration";
    if (mutation) ++expected;
    CHECK(r["revision"] == expected);
    CHECK(s.revision() == expected);
  }
  const Json st = s.state();
  CHECK(st["revision"] == expected);
}

TEST_CASE("mutations are broadcast to other connections") {
  Service s(ServiceConfig::defaults());
  std::vector<std::string> seen_a, seen_b;
  const auto a = s.connect([&](const std::string& l) { seen_a.push_back(l); });
  const auto b = s.connect([&](const std::string& l) { seen_b.push_back(l); });
  call(s, a, "set_fixation_pixel", {{"pixel", {100, 100}}});
  call(s, a, "get_state");
  call(s, b, "record_pair", {{"perceived", {110, 100}}});
  REQUIRE(seen_b.size() == 1);
  REQUIRE(seen_a.size() == 1);
  const Json ub = Json::parse(seen_b[0]);
  CHECK(ub["type"] == "state_update");
  CHECK(ub["revision"] == 1);
  CHECK(ub["payload"]["revision"] == 1);
  const Json ua = Json::parse(seen_a[0]);
  CHECK(ua["revision"] == 2);
  CHECK(ua["payload"]["pair_count"] == 1);
  s.disconnect(b);
  call(s, a, "set_fixation_pixel", {{"pixel", {200, 100}}});
  CHECK(seen_b.size() == 1);
}

TEST_CASE("concurrent clients get consistent revisions") {
  Service s(ServiceConfig::defaults());
  std::mutex mu;
  std::vector<std::uint64_t> updates;
  const auto watcher = s.connect([&](const std::string& l) {
    std::lock_guard lock(mu);
    updates.push_back(Json::parse(l)["revision"].get<std::uint64_t>());
  });
  (void)watcher;
  std::vector<std::thread> threads;
  std::vector<std::vector<std::uint64_t>> revs(4);
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      const auto c = s.connect();
      for (int i = 0; i < 50; ++i) {
        const Json r = call(s, c, "record_pair", {{"commanded", {100.0 + t, 100.0 + i}}, {"perceived", {101.0, 100.0}}});
        revs[t].push_back(r["revision"].get<std::uint64_t>());
      }
    });
  }
  for (auto& th : threads) th.join();
  CHECK(s.revision() == 200);
  std::vector<std::uint64_t> all;
  for (const auto& r : revs) all.insert(all.end(), r.begin(), r.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i + 1);
  std::sort(updates.begin(), updates.end());
  CHECK(updates == all);
}

TEST_CASE("session directory persists and replays to identical models") {
  TempDir dir;
  ServiceConfig cfg = ServiceConfig::defaults();
  cfg.session_dir = dir.path;
  Json first;
  {
    Service s(cfg);
    const auto c = s.connect();
    for (double v : {150.0, 400.0, 700.0, 950.0}) {
      for (double u : {150.0, 600.0, 1000.0, 1300.0}) {
        call(s, c, "record_pair", {{"commanded", {u, v}}, {"perceived", {1.1 * u - 7.0 + 1e-3 * v, v + 0.01 * u}}});
      }
    }
    first = call(s, c, "fit_calibration")["payload"]["model"];
    call(s, c, "load_rig", {{"rig", rig_to_json(AvatarRig::ring(6, 40.0))}});
  }
  CHECK(fs::exists(dir.path / "pairs.jsonl"));
  CHECK(read_json_file(dir.path / "model.json") == first);
  CHECK(rig_from_json(read_json_file(dir.path / "rig.json")).size() == 6);

  Service again(cfg);
  const auto c = again.connect();
  CHECK(call(again, c, "get_state")["payload"]["pair_count"] == 16);
  const Json refit = call(again, c, "fit_calibration")["payload"]["model"];
  CHECK(refit["coef_u"] == first["coef_u"]);
  CHECK(refit["coef_v"] == first["coef_v"]);
  CHECK(refit == first);

  const auto pairs = read_pair_log(dir.path / "pairs.jsonl");
  const CorrectionModel direct = fit_correction(pairs);
  CHECK(Json(direct) == first);
}

TEST_CASE("corrected fixation uses the model") {
  Service s(ServiceConfig::defaults());
  const auto c = s.connect();
  record_grid(s, c, 30.0);
  call(s, c, "fit_calibration");
  const Json r = call(s, c, "set_fixation_pixel", {{"pixel", {750, 540}}, {"apply_model", true}});
  const Json& fx = r["payload"]["fixation"];
  CHECK(fx["corrected"] == true);
  CHECK(fx["commanded_pixel"][0].get<double>() == doctest::Approx(720.0));
  CHECK(fx["pixel"][0] == 750.0);
  // Recording without an explicit commanded point uses the active fixation.
  const Json rec = call(s, c, "record_pair", {{"perceived", {750, 540}}});
  CHECK(rec["payload"]["pair"]["commanded"][0].get<double>() == doctest::Approx(720.0));
}

TEST_CASE("run_scenario over the wire") {
  Service s(ServiceConfig::defaults());
  const auto c = s.connect();
  const Json scenario = read_json_file(GAZESYNTH_PRESETS "/scenarios/affine_gain.json");
  const Json r = call(s, c, "run_scenario", {{"scenario", scenario}});
  CHECK(r["payload"]["status"] == "ok");
  CHECK(r["revision"] == 0);
  CHECK(call(s, c, "run_scenario", {{"scenario", {{"name", 1}}}})["type"] == "error");
}

TEST_CASE("stream transport answers every line") {
  Service s(ServiceConfig::defaults());
  std::istringstream in(
      "{\"type\":\"get_state\",\"id\":1}\n\n"
      "garbage\n"
      "{\"type\":\"set_fixation_pixel\",\"id\":2,\"payload\":{\"pixel\":[10,10]}}\n");
  std::ostringstream out;
  serve_stream(s, in, out);
  std::istringstream lines(out.str());
  std::vector<Json> replies;
  for (std::string l; std::getline(lines, l);) replies.push_back(Json::parse(l));
  REQUIRE(replies.size() == 3);
  CHECK(replies[0]["id"] == 1);
  CHECK(replies[1]["payload"]["code"] == "malformed");
  CHECK(replies[2]["revision"] == 1);
}

TEST_CASE("TCP transport") {
  Service s(ServiceConfig::defaults());
  std::atomic<bool> stop{false};
  std::promise<std::uint16_t> ready;
  std::thread server([&] { serve_tcp(s, 0, stop, [&](std::uint16_t p) { ready.set_value(p); }); });
  const std::uint16_t port = ready.get_future().get();

  auto open = [&] {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
    return fd;
  };
  auto read_line = [](int fd) {
    std::string line;
    char ch;
    while (::recv(fd, &ch, 1, 0) == 1 && ch != '\n') line += ch;
    return line;
  };
  const int a = open();
  const int b = open();
  const std::string msg = "{\"type\":\"set_fixation_pixel\",\"id\":9,\"payload\":{\"pixel\":[700,500]}}\n";
  // Confirm b is registered before a mutates.
  const std::string ping = "{\"type\":\"get_state\",\"id\":1}\n";
  REQUIRE(::send(b, ping.data(), ping.size(), 0) == static_cast<ssize_t>(ping.size()));
  CHECK(Json::parse(read_line(b))["id"] == 1);
  REQUIRE(::send(a, msg.data(), msg.size(), 0) == static_cast<ssize_t>(msg.size()));
  const Json reply = Json::parse(read_line(a));
  CHECK(reply["id"] == 9);
  CHECK(reply["revision"] == 1);
  const Json update = Json::parse(read_line(b));
  CHECK(update["type"] == "state_update");
  CHECK(update["revision"] == 1);

  const std::string huge(1 << 21, 'x');
  ::send(a, huge.data(), huge.size(), MSG_NOSIGNAL);
  ::send(a, "\n", 1, MSG_NOSIGNAL);
  CHECK(Json::parse(read_line(a))["payload"]["code"] == "line_too_long");

  ::close(a);
  ::close(b);
  stop = true;
  server.join();
}

TEST_CASE("golden transcript replays") {
  const auto golden = transcript::read(GAZESYNTH_TEST_DATA "/golden_transcript.jsonl");
  REQUIRE(golden.size() == transcript::script().size());
  for (std::size_t i = 0; i < golden.size(); ++i) CHECK(golden[i].request == transcript::script()[i]);
  CHECK(transcript::mismatches(golden).empty());
}

TEST_CASE("transcript comparison ignores only timestamps") {
  auto golden = transcript::run(transcript::script());
  CHECK(transcript::mismatches(golden).empty());
  auto retimed = golden;
  for (auto& e : retimed) {
    if (e.reply["type"] == "record_pair") e.reply["payload"]["pair"]["t"] = 1e9;
  }
  CHECK(transcript::mismatches(retimed).empty());
  auto tampered = golden;
  tampered.back().reply["revision"] = 999;
  CHECK(transcript::mismatches(tampered).size() == 1);
}
