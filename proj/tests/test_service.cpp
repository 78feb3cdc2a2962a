#include "testing.h"

#include <httplib.h>

#include <cstdlib>
#include <random>
#include <thread>

#include "common/error.h"
#include "common/png_io.h"
#include "service/service.h"

using namespace dscm;
using namespace dscm::service;
using nlohmann::json;

namespace {

const phantom::PhantomConfig kConfig{};

std::shared_ptr<const scm::DeepScm> model() {
  static const auto m = [] {
    torch::manual_seed(12);
    auto spec = GraphSpec::multiple_sclerosis();
    std::vector<ValueMap> cov;
    for (const auto& r : phantom::generate_phantoms(200, kConfig, 2)) cov.push_back(r.covariates);
    auto out = std::make_shared<scm::DeepScm>(spec, scm::fit_bases(spec, cov), vae::VaeConfig::desk());
    out->train(false);
    return out;
  }();
  return m;
}

const InferenceService& svc() {
  static const InferenceService s(model(), phantom::generate_phantoms(10, kConfig, 77), kConfig, "untrained");
  return s;
}

Response post(const json& body) { return svc().handle("POST", "/counterfactual", {}, body.dump()); }

Gray8 png_field(const json& j, const std::string& key) { return decode_png(base64_decode(j.at(key).get<std::string>())); }

std::string lesion_record() {
  for (const auto& r : svc().records())
    if (r.covariates.at("l") > 3) return r.id;
  return svc().records().front().id;
}

}  // namespace

TEST_CASE("base64 agrees with the reference encoder") {
  CHECK(base64_encode({'M', 'a', 'n'}) == "TWFu");
  CHECK(base64_encode({'M', 'a'}) == "TWE=");
  CHECK(base64_encode({'M'}) == "TQ==");
  CHECK(base64_encode({}).empty());
  std::mt19937 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<uint8_t> bytes(static_cast<size_t>(trial));
    for (auto& b : bytes) b = static_cast<uint8_t>(rng());
    const auto text = base64_encode(bytes);
    REQUIRE(text == httplib::detail::base64_encode(std::string(bytes.begin(), bytes.end())));
    REQUIRE(base64_decode(text) == bytes);
  }
  CHECK_THROWS_AS(base64_decode("ab$d"), Error);
}

TEST_CASE("difference images are centred on 128") {
  Image a(1, 5), b(1, 5);
  a.pixels = {0.0f, 0.5f, -0.5f, 1.0f, 0.25f};
  const auto d = encode_difference(a, b);
  CHECK(d.pixels == std::vector<uint8_t>{128, 255, 1, 255, 192});
  CHECK_THROWS_AS(encode_difference(a, Image(2, 2)), Error);
}

TEST_CASE("port comes from the environment when valid") {
  ::unsetenv(kPortVariable);
  CHECK(port_from_environment() == 8080);
  ::setenv(kPortVariable, "9123", 1);
  CHECK(port_from_environment() == 9123);
  ::setenv(kPortVariable, "99999", 1);
  CHECK(port_from_environment(7000) == 7000);
  ::setenv(kPortVariable, "12ab", 1);
  CHECK(port_from_environment(7000) == 7000);
  ::unsetenv(kPortVariable);
}

TEST_CASE("model info carries units and slider ranges") {
  const auto r = svc().handle("GET", "/model/info", {}, "");
  REQUIRE(r.status == 200);
  const auto info = json::parse(r.body);
  CHECK(info.at("schema") == "v1");
  CHECK(info.at("image").at("height") == 64);
  CHECK(info.at("dataset").at("count") == 10);
  REQUIRE(info.at("variables").size() == 9);
  for (const auto& v : info.at("variables")) {
    INFO(v.dump());
    if (v.at("name") == "x") {
      CHECK(v.at("intervenable") == false);
      continue;
    }
    CHECK(!v.at("unit").get<std::string>().empty());
    const double lo = v.at("range").at("min").get<double>();
    const double hi = v.at("range").at("max").get<double>();
    CHECK(lo < hi);
    for (const auto& rec : svc().records()) {
      const double x = rec.covariates.at(v.at("name").get<std::string>());
      CHECK(x >= lo);
      CHECK(x <= hi);
    }
  }
  for (const auto& v : info.at("variables")) {
    if (v.at("name") == "l") CHECK(v.at("range").at("min") == 0.0);
    if (v.at("name") == "e") {
      CHECK(v.at("range").at("max") == 10.0);
      CHECK(v.at("range").at("step") == 1.0);
    }
  }
}

TEST_CASE("observations are paged") {
  auto r = svc().handle("GET", "/observations", {{"page", "2"}, {"page_size", "4"}}, "");
  REQUIRE(r.status == 200);
  auto j = json::parse(r.body);
  CHECK(j.at("total") == 10);
  CHECK(j.at("pages") == 3);
  CHECK(j.at("items").size() == 2);
  CHECK(j.at("items")[0].at("id") == svc().records()[8].id);
  const auto thumb = j.at("items")[0].at("thumbnail").get<std::string>();
  auto t = svc().handle("GET", thumb, {}, "");
  CHECK(t.status == 200);
  CHECK(t.content_type == "image/png");
  const auto png = decode_png(std::vector<uint8_t>(t.body.begin(), t.body.end()));
  CHECK(png.width == 64);
  CHECK(json::parse(svc().handle("GET", "/observations", {{"page", "9"}}, "").body).at("items").empty());
  CHECK(svc().handle("GET", "/observations", {{"page_size", "0"}}, "").status == 400);
  CHECK(svc().handle("GET", "/observations", {{"page", "x"}}, "").status == 400);
  CHECK(svc().handle("GET", "/observations/nope", {}, "").status == 404);
  CHECK(svc().handle("GET", "/observations/nope/thumbnail.png", {}, "").status == 404);
  CHECK(svc().handle("GET", "/elsewhere", {}, "").status == 404);
  CHECK(svc().handle("GET", "/observations/" + svc().records()[0].id, {}, "").status == 200);
}

TEST_CASE("null intervention returns the original within quantization") {
  const auto r = post({{"observation_id", lesion_record()}, {"interventions", json::object()}});
  REQUIRE(r.status == 200);
  const auto j = json::parse(r.body);
  const auto a = png_field(j, "image_original"), b = png_field(j, "image_counterfactual"), d = png_field(j, "image_diff");
  int worst = 0, worst_diff = 0;
  for (size_t i = 0; i < a.pixels.size(); ++i) {
    worst = std::max(worst, std::abs(int(a.pixels[i]) - int(b.pixels[i])));
    worst_diff = std::max(worst_diff, std::abs(int(d.pixels[i]) - 128));
  }
  CHECK(worst <= 1);
  CHECK(worst_diff <= 2);
  CHECK(j.at("latency_ms") == 0.0);
  for (const auto& [k, v] : j.at("covariates_before").items())
    CHECK(j.at("covariates_after").at(k).get<double>() == doctest::Approx(v.get<double>()).epsilon(1e-5));
}

TEST_CASE("counterfactual requests are validated") {
  const auto id = lesion_record();
  auto r = post({{"observation_id", id}, {"interventions", {{"q", 1}}}});
  CHECK(r.status == 400);
  CHECK(json::parse(r.body).at("variable") == "q");
  r = post({{"observation_id", id}, {"interventions", {{"l", -1}}}});
  CHECK(r.status == 400);
  CHECK(json::parse(r.body).at("variable") == "l");
  r = post({{"observation_id", id}, {"interventions", {{"x", 0}}}});
  CHECK(r.status == 400);
  CHECK(json::parse(r.body).at("variable") == "x");
  r = post({{"observation_id", id}, {"interventions", {{"a", "old"}}}});
  CHECK(r.status == 400);
  CHECK(post({{"observation_id", "ph99999"}}).status == 404);
  CHECK(post({{"interventions", {{"l", 0}}}}).status == 400);
  CHECK(post({{"observation_id", id}, {"schema", "v0"}}).status == 400);
  CHECK(svc().handle("POST", "/counterfactual", {}, "{not json").status == 400);
  CHECK(post({{"observation", {{"covariates", {{"a", 40}}}, {"image", "!!"}}}}).status == 400);

  InferenceService empty(nullptr, {}, kConfig);
  CHECK(empty.handle("GET", "/model/info", {}, "").status == 503);
  CHECK(empty.handle("POST", "/counterfactual", {}, "{}").status == 503);
  CHECK(empty.handle("GET", "/observations", {}, "").status == 200);
}

TEST_CASE("deterministic responses are byte-identical, also under concurrency") {
  const json req = {{"observation_id", lesion_record()}, {"interventions", {{"l", 0}}}};
  const auto first = post(req);
  REQUIRE(first.status == 200);
  CHECK(post(req).body == first.body);
  const auto j = json::parse(first.body);
  CHECK(j.at("covariates_after").at("l") == 0.0);
  CHECK(j.contains("image_diff"));

  std::vector<std::string> bodies(4);
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) threads.emplace_back([&, t] { bodies[static_cast<size_t>(t)] = post(req).body; });
  for (auto& t : threads) t.join();
  for (const auto& b : bodies) CHECK(b == first.body);

  auto no_diff = post({{"observation_id", lesion_record()}, {"options", {{"return_diff", false}}}});
  CHECK(!json::parse(no_diff.body).contains("image_diff"));
  auto sampled = post({{"observation_id", lesion_record()}, {"options", {{"deterministic", false}}}});
  CHECK(sampled.status == 200);
  CHECK(json::parse(sampled.body).at("deterministic") == false);
}

TEST_CASE("inline observations are accepted") {
  const auto& rec = svc().records()[1];
  const auto image = base64_encode(encode_png(phantom::to_gray8(rec.image, kConfig.png_ceiling)));
  json req;
  req["observation"] = {{"covariates", json(rec.covariates)}, {"image", image}};
  req["interventions"] = {{"l", 0}};
  auto r = post(req);
  REQUIRE(r.status == 200);
  CHECK(!json::parse(r.body).contains("observation_id"));
}

TEST_CASE("HTTP server round trip") {
  HttpServer server(svc());
  const int port = server.bind("127.0.0.1", 0);
  REQUIRE(port > 0);
  std::thread runner([&] { server.run(); });
  httplib::Client client("127.0.0.1", port);
  for (int i = 0; i < 50 && !client.Get("/model/info"); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(20));
  auto info = client.Get("/model/info");
  REQUIRE(info);
  CHECK(info->status == 200);
  auto page = client.Get("/observations?page=0&page_size=3");
  REQUIRE(page);
  CHECK(json::parse(page->body).at("items").size() == 3);
  json req = {{"observation_id", lesion_record()}, {"interventions", {{"q", 1}}}};
  auto bad = client.Post("/counterfactual", req.dump(), "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
  CHECK(bad->body.find("\"q\"") != std::string::npos);
  req["interventions"] = {{"l", 0}};
  auto good = client.Post("/counterfactual", req.dump(), "application/json");
  REQUIRE(good);
  CHECK(good->status == 200);
  CHECK(good->body == post(req).body);
  server.stop();
  runner.join();
}
