#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "trex/toolkit.hpp"

using namespace trex;

namespace {

Json minimal_scene_doc() {
  Json doc;
  doc["schema"] = 1;
  doc["name"] = "bench";
  doc["table_height"] = 0.0;
  doc["workspace"] = {{"min", {-1.0, -1.0, 0.0}}, {"max", {1.0, 1.0, 1.0}}};
  doc["ee_home"] = {{"translation", {0.0, 0.0, 0.5}},
                    {"quaternion", {1.0, 0.0, 0.0, 0.0}}};
  Json jo;
  jo["id"] = "target";
  jo["class"] = "block";
  jo["extent"] = {0.04, 0.04, 0.04};
  jo["pose"] = {{"translation", {0.3, 0.1, 0.02}},
                {"quaternion", {1.0, 0.0, 0.0, 0.0}}};
  jo["keypoints"] = {{0.02, 0.0, 0.0}, {-0.02, 0.0, 0.0}};
  doc["objects"] = Json::array({jo});
  return doc;
}

ToolSpec make_tool(const std::string& name, RepKind out, double avg,
                   double p_any, const NoiseSpec& noise = {}) {
  ToolSpec t;
  t.name = name;
  t.output = out;
  t.avg_time = avg;
  t.noise = noise;
  t.p_succ["*"] = p_any;
  return t;
}

// Independent selection oracle: gather candidates, then explicit
// lexicographic max (utility desc, p desc, h asc, name asc).
std::optional<SelectionResult> oracle_select(const Registry& reg,
                                             const Requirement& req) {
  std::vector<SelectionResult> cands;
  for (const ToolSpec& t : reg.tools) {
    if (!output_serves(t.output, req.kind)) continue;
    const double p = t.p_for_class(req.object_class);
    if (p <= 0.0) continue;
    cands.push_back({t.name, p, t.estimated_time(),
                     p - reg.lambda_per_second * t.estimated_time()});
  }
  if (cands.empty()) return std::nullopt;
  auto better = [](const SelectionResult& a, const SelectionResult& b) {
    if (a.utility != b.utility) return a.utility > b.utility;
    if (a.p != b.p) return a.p > b.p;
    if (a.h != b.h) return a.h < b.h;
    return a.tool < b.tool;
  };
  SelectionResult best = cands[0];
  for (std::size_t i = 1; i < cands.size(); ++i) {
    if (better(cands[i], best)) best = cands[i];
  }
  return best;
}

}  // namespace

TEST_CASE("output_serves matches kinds with the point-set widening") {
  CHECK(output_serves(RepKind::point, RepKind::point));
  CHECK(output_serves(RepKind::point_set, RepKind::point));
  CHECK_FALSE(output_serves(RepKind::point, RepKind::point_set));
  CHECK_FALSE(output_serves(RepKind::pose, RepKind::point));
  CHECK(output_serves(RepKind::topo_order, RepKind::topo_order));
}

TEST_CASE("p_for_class prefers the exact class over the wildcard") {
  ToolSpec t = make_tool("t", RepKind::point, 1.0, 0.5);
  t.p_succ["block"] = 0.9;
  CHECK(t.p_for_class("block") == 0.9);
  CHECK(t.p_for_class("mug") == 0.5);
  ToolSpec narrow;
  narrow.p_succ["block"] = 0.9;
  CHECK(narrow.p_for_class("mug") == 0.0);
}

TEST_CASE("estimated time is the running mean of observed durations") {
  ToolSpec t = make_tool("t", RepKind::point, 2.0, 0.9);
  CHECK(t.estimated_time() == 2.0);  // declared average until observed
  t.observe_duration(4.0);
  t.observe_duration(6.0);
  CHECK(t.estimated_time() == Catch::Approx(5.0));
}

TEST_CASE("selection maximizes p minus lambda times runtime") {
  Registry reg;
  reg.lambda_per_second = 0.01;
  reg.register_tool(make_tool("fast_ok", RepKind::point, 1.0, 0.90));
  reg.register_tool(make_tool("slow_good", RepKind::point, 10.0, 0.95));

  Requirement req;
  req.kind = RepKind::point;
  req.object_class = "block";

  // 0.90 - 0.01 = 0.89 beats 0.95 - 0.10 = 0.85.
  auto sel = select_tool(reg, req);
  REQUIRE(sel);
  CHECK(sel->tool == "fast_ok");
  CHECK(sel->utility == Catch::Approx(0.89));

  // Cheap runtime flips the winner once p dominates.
  reg.find("slow_good")->avg_time = 1.0;
  sel = select_tool(reg, req);
  REQUIRE(sel);
  CHECK(sel->tool == "slow_good");
}

TEST_CASE("selection tie-breaks: p, then runtime, then name") {
  Requirement req;
  req.kind = RepKind::point;
  req.object_class = "x";

  // Equal utility and p: lower runtime wins; equal runtime: name ascending.
  Registry reg;
  reg.lambda_per_second = 0.0;  // utility == p, so ties are exact
  reg.register_tool(make_tool("cc", RepKind::point, 3.0, 0.9));
  reg.register_tool(make_tool("bb", RepKind::point, 1.0, 0.9));
  reg.register_tool(make_tool("dd", RepKind::point, 1.0, 0.9));
  auto sel = select_tool(reg, req);
  REQUIRE(sel);
  CHECK(sel->tool == "bb");

  // Exact utility tie with different p (dyadic arithmetic, no rounding):
  // 0.5 - 0.25*0 == 0.75 - 0.25*1.  Higher p wins.
  Registry tie;
  tie.lambda_per_second = 0.25;
  tie.register_tool(make_tool("zz_instant", RepKind::point, 1.0, 0.5));
  tie.find("zz_instant")->observe_duration(0.0);  // estimate drops to 0
  tie.register_tool(make_tool("aa_surer", RepKind::point, 1.0, 0.75));
  sel = select_tool(tie, req);
  REQUIRE(sel);
  CHECK(sel->utility == 0.5);
  CHECK(sel->tool == "aa_surer");
}

TEST_CASE("selection skips tools that cannot succeed") {
  Registry reg;
  reg.register_tool(make_tool("poser", RepKind::pose, 1.0, 0.9));
  reg.register_tool(make_tool("never", RepKind::point, 1.0, 0.0));

  Requirement req;
  req.kind = RepKind::point;
  req.object_class = "x";
  CHECK_FALSE(select_tool(reg, req).has_value());  // pose cannot serve point

  req.kind = RepKind::vector;
  CHECK_FALSE(select_tool(reg, req).has_value());

  // A p outside [0, 1] from a provider is a hard error.
  req.kind = RepKind::point;
  CHECK_THROWS_AS(
      select_tool(reg, req, [](const ToolSpec&, const Requirement&) {
        return 1.5;
      }),
      Error);
}

TEST_CASE("selection matches the brute-force oracle on random registries") {
  Rng rng(2024);
  const std::vector<RepKind> kinds = {RepKind::point, RepKind::point_set,
                                      RepKind::vector, RepKind::pose,
                                      RepKind::region};
  const std::vector<std::string> classes = {"block", "mug", "plush", "drawer"};
  for (int trial = 0; trial < 300; ++trial) {
    Registry reg;
    reg.lambda_per_second = rng.bernoulli(0.3) ? 0.0 : 0.01 * rng.uniform(0.0, 5.0);
    const int n_tools = 1 + static_cast<int>(rng.uniform_u64(8));
    for (int i = 0; i < n_tools; ++i) {
      ToolSpec t;
      t.name = "tool" + std::to_string(i);
      t.output = kinds[rng.uniform_u64(kinds.size())];
      // Quantized grids force frequent exact ties.
      t.avg_time = 0.5 * (1 + static_cast<int>(rng.uniform_u64(6)));
      const double p = 0.05 * static_cast<double>(rng.uniform_u64(21));
      if (rng.bernoulli(0.7)) t.p_succ["*"] = p;
      if (rng.bernoulli(0.5)) {
        t.p_succ[classes[rng.uniform_u64(classes.size())]] =
            0.05 * static_cast<double>(rng.uniform_u64(21));
      }
      if (rng.bernoulli(0.3)) t.observe_duration(rng.uniform(0.1, 8.0));
      reg.register_tool(std::move(t));
    }
    for (int q = 0; q < 4; ++q) {
      Requirement req;
      req.kind = kinds[rng.uniform_u64(kinds.size())];
      req.object_class = classes[rng.uniform_u64(classes.size())];
      const auto got = select_tool(reg, req);
      const auto want = oracle_select(reg, req);
      REQUIRE(got.has_value() == want.has_value());
      if (got) {
        CHECK(got->tool == want->tool);
        CHECK(got->p == want->p);
        CHECK(got->h == want->h);
        CHECK(got->utility == want->utility);
      }
    }
  }
}

TEST_CASE("registry json round-trips with observations and extra fields") {
  Json doc;
  doc["schema"] = 1;
  doc["lambda_per_second"] = 0.02;
  doc["fine_sigma_factor"] = 0.25;
  Json jt;
  jt["name"] = "probe";
  jt["output"] = "point";
  jt["avg_time"] = 1.5;
  jt["noise"] = {{"model", "gaussian_xyz"}, {"sigma", 0.003}};
  jt["p_succ"] = {{"*", 0.9}, {"block", 0.95}};
  jt["vendor"] = "acme";  // unrecognized, must survive
  doc["tools"] = Json::array({jt});

  Registry reg = registry_from_json(doc, "doc");
  CHECK(reg.lambda_per_second == 0.02);
  REQUIRE(reg.tools.size() == 1);
  CHECK(reg.tools[0].noise.sigma == 0.003);
  CHECK(reg.tools[0].extra.at("vendor") == "acme");

  reg.tools[0].observe_duration(2.0);
  const Json out = registry_to_json(reg);
  const Registry back = registry_from_json(out, "round");
  CHECK(back.tools[0].estimated_time() == 2.0);
  CHECK(back.tools[0].extra.at("vendor") == "acme");
  CHECK(back.tools[0].p_succ.at("block") == 0.95);
}

TEST_CASE("registry json rejects malformed documents") {
  Json doc;
  doc["schema"] = 2;
  doc["tools"] = Json::array();
  CHECK_THROWS_AS(registry_from_json(doc, "doc"), ParseError);

  doc["schema"] = 1;
  Json jt;
  jt["name"] = "t";
  jt["output"] = "point";
  jt["avg_time"] = 1.0;
  jt["p_succ"] = {{"*", 0.9}};

  SECTION("duplicate tool name") {
    doc["tools"] = Json::array({jt, jt});
    CHECK_THROWS_AS(registry_from_json(doc, "doc"), ParseError);
  }
  SECTION("unknown output kind") {
    jt["output"] = "hologram";
    doc["tools"] = Json::array({jt});
    CHECK_THROWS_AS(registry_from_json(doc, "doc"), ParseError);
  }
  SECTION("non-positive avg_time") {
    jt["avg_time"] = 0.0;
    doc["tools"] = Json::array({jt});
    CHECK_THROWS_AS(registry_from_json(doc, "doc"), ParseError);
  }
  SECTION("unknown noise model") {
    jt["noise"] = {{"model", "poisson"}, {"sigma", 0.1}};
    doc["tools"] = Json::array({jt});
    CHECK_THROWS_AS(registry_from_json(doc, "doc"), ParseError);
  }
  SECTION("p_succ outside [0, 1]") {
    jt["p_succ"] = {{"*", 1.2}};
    doc["tools"] = Json::array({jt});
    CHECK_THROWS_AS(registry_from_json(doc, "doc"), ParseError);
  }
  SECTION("fine_sigma_factor outside (0, 1]") {
    doc["fine_sigma_factor"] = 0.0;
    doc["tools"] = Json::array({jt});
    CHECK_THROWS_AS(registry_from_json(doc, "doc"), ParseError);
  }
}

TEST_CASE("registry registration guards duplicates and lookups") {
  Registry reg;
  reg.register_tool(make_tool("a", RepKind::point, 1.0, 0.9));
  CHECK_THROWS_AS(reg.register_tool(make_tool("a", RepKind::pose, 1.0, 0.9)),
                  Error);
  CHECK(reg.find("a") != nullptr);
  CHECK(reg.find("b") == nullptr);
  CHECK_THROWS_AS(reg.remove_tool("b"), LookupError);
  reg.remove_tool("a");
  CHECK(reg.tools.empty());
}

TEST_CASE("run_tool returns exact ground truth when noise is off") {
  SimWorld world(scene_from_json(minimal_scene_doc(), "doc"));
  Registry reg;
  reg.register_tool(make_tool("locator", RepKind::point, 1.0, 1.0));

  Requirement req;
  req.kind = RepKind::point;
  req.object_id = "target";
  req.object_class = "block";

  Rng rng(5);
  const double t0 = world.sim_time();
  const ExtractionResult r = run_tool(world, reg, "locator", req, rng);
  REQUIRE(r.status == ExtractStatus::ok);
  REQUIRE(r.value.has_value());
  const Point3 p = std::get<PointValue>(*r.value).point;
  CHECK((p - Vec3{0.3, 0.1, 0.02}).norm() == 0.0);
  // Clock advanced by the sampled duration; duration near the declared mean.
  CHECK(world.sim_time() - t0 == Catch::Approx(r.duration));
  CHECK(r.duration >= 0.2 * 1.0);
  // The tool's runtime estimate absorbed the observation.
  CHECK(reg.find("locator")->time_count == 1);

  CHECK_THROWS_AS(run_tool(world, reg, "ghost", req, rng), LookupError);
}

TEST_CASE("run_tool with advance_clock false leaves the clock alone") {
  SimWorld world(scene_from_json(minimal_scene_doc(), "doc"));
  Registry reg;
  reg.register_tool(make_tool("locator", RepKind::point, 1.0, 1.0));
  Requirement req;
  req.kind = RepKind::point;
  req.object_id = "target";
  req.object_class = "block";
  Rng rng(6);
  const double t0 = world.sim_time();
  const ExtractionResult r = run_tool(world, reg, "locator", req, rng, 1.0,
                                      /*advance_clock=*/false);
  CHECK(r.status == ExtractStatus::ok);
  CHECK(r.duration > 0.0);
  CHECK(world.sim_time() == t0);
}

TEST_CASE("run_tool reports occlusion and tool failure separately") {
  SimWorld world(scene_from_json(minimal_scene_doc(), "doc"));
  Registry reg;
  reg.register_tool(make_tool("locator", RepKind::point, 1.0, 1.0));
  reg.register_tool(make_tool("broken", RepKind::point, 1.0, 0.0));
  Requirement req;
  req.kind = RepKind::point;
  req.object_id = "target";
  req.object_class = "block";
  Rng rng(7);

  world.set_occlusion_probability(1.0);
  const ExtractionResult occ = run_tool(world, reg, "locator", req, rng);
  CHECK(occ.status == ExtractStatus::occluded);
  CHECK_FALSE(occ.value.has_value());

  world.set_occlusion_probability(0.0);
  const ExtractionResult fail = run_tool(world, reg, "broken", req, rng);
  CHECK(fail.status == ExtractStatus::failed);
  CHECK_FALSE(fail.value.has_value());
}

TEST_CASE("gaussian noise matches the declared sigma") {
  SimWorld world(scene_from_json(minimal_scene_doc(), "doc"));
  Registry reg;
  NoiseSpec noise;
  noise.model = "gaussian_xyz";
  noise.sigma = 0.01;
  reg.register_tool(make_tool("noisy", RepKind::point, 1.0, 1.0, noise));
  Requirement req;
  req.kind = RepKind::point;
  req.object_id = "target";
  req.object_class = "block";
  const Point3 gt{0.3, 0.1, 0.02};

  Rng rng(8);
  double sq = 0.0;
  const int n = 2000;
  for (int i = 0; i < n; ++i) {
    const ExtractionResult r = run_tool(world, reg, "noisy", req, rng);
    REQUIRE(r.status == ExtractStatus::ok);
    sq += (std::get<PointValue>(*r.value).point - gt).squared_norm();
  }
  // E|err|^2 = 3 sigma^2; relative sd of the mean ~ sqrt(2/(3n)) ~ 1.8%.
  const double ms = sq / n;
  CHECK(ms == Catch::Approx(3.0 * 0.01 * 0.01).epsilon(0.08));
}

TEST_CASE("fine extraction shrinks noise by the configured factor") {
  SimWorld world(scene_from_json(minimal_scene_doc(), "doc"));
  Registry reg;
  reg.fine_sigma_factor = 0.2;
  NoiseSpec noise;
  noise.model = "gaussian_xyz";
  noise.sigma = 0.01;
  reg.register_tool(make_tool("noisy", RepKind::point, 1.0, 1.0, noise));
  reg.register_tool(make_tool("cropper", RepKind::region, 0.5, 1.0));

  Requirement req;
  req.kind = RepKind::point;
  req.object_id = "target";
  req.object_class = "block";
  const Point3 gt{0.3, 0.1, 0.02};

  Rng rng(9);
  double sq_coarse = 0.0, sq_fine = 0.0;
  const int n = 500;
  for (int i = 0; i < n; ++i) {
    req.granularity = Granularity::coarse;
    ExtractionResult r = extract(world, reg, req, rng);
    REQUIRE(r.status == ExtractStatus::ok);
    REQUIRE(r.delivered == Granularity::coarse);
    sq_coarse += (std::get<PointValue>(*r.value).point - gt).squared_norm();

    req.granularity = Granularity::fine;
    r = extract(world, reg, req, rng);
    REQUIRE(r.status == ExtractStatus::ok);
    REQUIRE(r.delivered == Granularity::fine);
    sq_fine += (std::get<PointValue>(*r.value).point - gt).squared_norm();
  }
  const double ratio = std::sqrt(sq_fine / sq_coarse);
  CHECK(ratio > 0.2 * 0.85);
  CHECK(ratio < 0.2 * 1.15);
}

TEST_CASE("fine extraction degrades to coarse without a region tool") {
  SimWorld world(scene_from_json(minimal_scene_doc(), "doc"));
  Registry reg;
  reg.register_tool(make_tool("locator", RepKind::point, 1.0, 1.0));
  Requirement req;
  req.kind = RepKind::point;
  req.object_id = "target";
  req.object_class = "block";
  req.granularity = Granularity::fine;
  Rng rng(10);
  const ExtractionResult r = extract(world, reg, req, rng);
  CHECK(r.status == ExtractStatus::ok);
  CHECK(r.delivered == Granularity::coarse);
  CHECK(r.detail.find("degraded") != std::string::npos);
}

TEST_CASE("extract reports unsupported requirements") {
  SimWorld world(scene_from_json(minimal_scene_doc(), "doc"));
  Registry reg;
  reg.register_tool(make_tool("locator", RepKind::point, 1.0, 1.0));
  Requirement req;
  req.kind = RepKind::pose;
  req.object_id = "target";
  req.object_class = "block";
  Rng rng(11);
  const ExtractionResult r = extract(world, reg, req, rng);
  CHECK(r.status == ExtractStatus::unsupported);
  CHECK(r.detail.find("pose") != std::string::npos);
}

TEST_CASE("point-set output serves a point requirement via the centroid") {
  SimWorld world(scene_from_json(minimal_scene_doc(), "doc"));
  Registry reg;
  reg.register_tool(make_tool("keypoints", RepKind::point_set, 1.0, 1.0));
  Requirement req;
  req.kind = RepKind::point;
  req.object_id = "target";
  req.object_class = "block";
  Rng rng(12);
  const ExtractionResult r = extract(world, reg, req, rng);
  REQUIRE(r.status == ExtractStatus::ok);
  // The tool returned its native kind; adapt collapses it to the centroid.
  const RepresentationValue adapted = adapt_value(*r.value, RepKind::point);
  const Point3 p = std::get<PointValue>(adapted).point;
  // Two keypoints symmetric about the center: centroid is the center.
  CHECK((p - Vec3{0.3, 0.1, 0.02}).norm() < 1e-12);

  CHECK_THROWS_AS(adapt_value(RepresentationValue(PoseValue{}), RepKind::point),
                  TypeError);
}

TEST_CASE("runtime adaptation shifts selection toward observed speed") {
  Registry reg;
  reg.lambda_per_second = 0.05;
  reg.register_tool(make_tool("claims_fast", RepKind::point, 1.0, 0.9));
  reg.register_tool(make_tool("steady", RepKind::point, 2.0, 0.9));

  Requirement req;
  req.kind = RepKind::point;
  req.object_class = "x";
  auto sel = select_tool(reg, req);
  REQUIRE(sel);
  CHECK(sel->tool == "claims_fast");

  // Three slow observations drag the estimate past the competitor.
  for (int i = 0; i < 3; ++i) reg.find("claims_fast")->observe_duration(10.0);
  sel = select_tool(reg, req);
  REQUIRE(sel);
  CHECK(sel->tool == "steady");
  CHECK(sel->h == 2.0);
}
