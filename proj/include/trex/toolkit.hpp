#pragma once

// Extractor toolkit: the tool registry, task-adaptive tool selection, and
// simulated extraction.
//
// A tool is described by its output representation kind, a declared average
// runtime (the physical truth used to sample durations), a noise model, and
// per-object-class success probabilities.  Selection maximizes
//     utility(t) = p_succ(t | request) - lambda * h(t)
// where h(t) is the registry's running-mean estimate of the tool's runtime
// (declared average until observations exist).  Ties break by higher p, then
// lower h, then name.
//
// Fine-granularity extraction is crop-then-extract: a region tool bounds the
// target first, then the value tool runs inside the crop with its noise
// scaled by `fine_sigma_factor`.  Without a region-producing tool the request
// degrades to coarse and says so in the result.

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "trex/representation.hpp"
#include "trex/rng.hpp"
#include "trex/sim.hpp"

namespace trex {

struct NoiseSpec {
  std::string model = "none";  // "none" | "gaussian_xyz" | "gaussian_pose"
  double sigma = 0.0;          // meters, positional
  double sigma_rot = 0.0;      // radians, rotational (gaussian_pose only)
};

struct ToolSpec {
  std::string name;
  RepKind output = RepKind::point;
  double avg_time = 1.0;  // declared mean runtime, seconds
  NoiseSpec noise;
  std::map<std::string, double> p_succ;  // object class -> probability; "*" default
  Json extra;  // unrecognized fields, preserved across load/save

  // Running-mean runtime estimate, fed by observed durations.
  double time_sum = 0.0;
  long time_count = 0;

  double estimated_time() const {
    return time_count > 0 ? time_sum / static_cast<double>(time_count) : avg_time;
  }

  void observe_duration(double seconds) {
    time_sum += seconds;
    ++time_count;
  }

  double p_for_class(const std::string& object_class) const {
    auto it = p_succ.find(object_class);
    if (it != p_succ.end()) return it->second;
    it = p_succ.find("*");
    return it != p_succ.end() ? it->second : 0.0;
  }
};

// What a constraint needs bound: one representation of `kind` for an object
// (or several, for orderings), at a preferred granularity.
struct Requirement {
  RepKind kind = RepKind::point;
  std::string object_id;
  std::string part;                     // optional part within the object
  std::string object_class;             // capability key
  Granularity granularity = Granularity::coarse;
  std::vector<std::string> object_ids;  // topo_order only
};

// A tool can serve a requirement when its output kind matches; a point
// requirement is also served by a point-set tool (bound via the centroid).
inline bool output_serves(RepKind output, RepKind required) {
  if (output == required) return true;
  return required == RepKind::point && output == RepKind::point_set;
}

struct Registry {
  int schema = 1;
  double lambda_per_second = 0.01;
  double fine_sigma_factor = 0.2;
  std::vector<ToolSpec> tools;

  const ToolSpec* find(const std::string& name) const {
    for (const auto& t : tools) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }

  ToolSpec* find(const std::string& name) {
    for (auto& t : tools) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }

  void register_tool(ToolSpec tool) {
    if (find(tool.name)) {
      throw Error("tool '" + tool.name + "' is already registered");
    }
    tools.push_back(std::move(tool));
  }

  void remove_tool(const std::string& name) {
    auto it = std::find_if(tools.begin(), tools.end(),
                           [&](const ToolSpec& t) { return t.name == name; });
    if (it == tools.end()) throw LookupError("unknown tool '" + name + "'");
    tools.erase(it);
  }

  bool has_output(RepKind kind) const {
    for (const auto& t : tools) {
      if (t.output == kind) return true;
    }
    return false;
  }
};

// Success-probability provider.  The default consults the tool's declared
// per-class capabilities; a remote backend can substitute its own scores.
using PSuccFn = std::function<double(const ToolSpec&, const Requirement&)>;

inline double default_p_succ(const ToolSpec& tool, const Requirement& req) {
  if (!output_serves(tool.output, req.kind)) return 0.0;
  return tool.p_for_class(req.object_class);
}

struct SelectionResult {
  std::string tool;
  double p = 0.0;
  double h = 0.0;        // runtime estimate used
  double utility = 0.0;  // p - lambda * h
};

// Picks argmax over utility; candidates with p == 0 cannot succeed and are
// excluded.  Returns nullopt when nothing can serve the requirement.
inline std::optional<SelectionResult> select_tool(const Registry& registry,
                                                  const Requirement& req,
                                                  const PSuccFn& p_succ_fn) {
  std::optional<SelectionResult> best;
  for (const ToolSpec& tool : registry.tools) {
    const double p = p_succ_fn(tool, req);
    if (p < 0.0 || p > 1.0) {
      throw Error("p_succ for tool '" + tool.name + "' outside [0, 1]");
    }
    if (p == 0.0) continue;
    SelectionResult cand{tool.name, p, tool.estimated_time(),
                         p - registry.lambda_per_second * tool.estimated_time()};
    if (!best) {
      best = cand;
      continue;
    }
    // Lexicographic preference: utility desc, p desc, h asc, name asc.
    const auto key = [](const SelectionResult& s) {
      return std::make_tuple(-s.utility, -s.p, s.h, s.tool);
    };
    if (key(cand) < key(*best)) best = cand;
  }
  return best;
}

inline std::optional<SelectionResult> select_tool(const Registry& registry,
                                                  const Requirement& req) {
  return select_tool(registry, req, default_p_succ);
}

// --- registry persistence --------------------------------------------------

inline Registry registry_from_json(const Json& doc, const std::string& where) {
  Registry reg;
  reg.schema = static_cast<int>(require_number(doc, "schema", where));
  if (reg.schema != 1) {
    throw ParseError(where + ": unsupported schema version");
  }
  reg.lambda_per_second = doc.value("lambda_per_second", 0.01);
  if (reg.lambda_per_second < 0.0) {
    throw ParseError(where + ": lambda_per_second must be >= 0");
  }
  reg.fine_sigma_factor = doc.value("fine_sigma_factor", 0.2);
  if (!(reg.fine_sigma_factor > 0.0 && reg.fine_sigma_factor <= 1.0)) {
    throw ParseError(where + ": fine_sigma_factor must be in (0, 1]");
  }
  const Json& tools = require_field(doc, "tools", where);
  for (const auto& jt : tools) {
    ToolSpec tool;
    tool.name = require_string(jt, "name", where);
    if (reg.find(tool.name)) {
      throw ParseError(where + ": duplicate tool '" + tool.name + "'");
    }
    tool.output = rep_kind_from_name(require_string(jt, "output", where));
    tool.avg_time = require_number(jt, "avg_time", where + "." + tool.name);
    if (!(tool.avg_time > 0.0)) {
      throw ParseError(where + ": avg_time must be positive for '" + tool.name + "'");
    }
    if (jt.contains("noise")) {
      const Json& jn = jt["noise"];
      tool.noise.model = require_string(jn, "model", where);
      tool.noise.sigma = jn.value("sigma", 0.0);
      tool.noise.sigma_rot = jn.value("sigma_rot", 0.0);
      if (tool.noise.model != "none" && tool.noise.model != "gaussian_xyz" &&
          tool.noise.model != "gaussian_pose") {
        throw ParseError(where + ": unknown noise model '" + tool.noise.model + "'");
      }
      if (tool.noise.sigma < 0.0 || tool.noise.sigma_rot < 0.0) {
        throw ParseError(where + ": noise sigmas must be >= 0");
      }
    }
    const Json& jp = require_field(jt, "p_succ", where + "." + tool.name);
    for (auto it = jp.begin(); it != jp.end(); ++it) {
      const double p = it.value().get<double>();
      if (!(p >= 0.0 && p <= 1.0)) {
        throw ParseError(where + ": p_succ values must lie in [0, 1]");
      }
      tool.p_succ[it.key()] = p;
    }
    tool.time_sum = jt.value("observed_time_sum", 0.0);
    tool.time_count = jt.value("observed_time_count", 0L);
    for (auto it = jt.begin(); it != jt.end(); ++it) {
      static const std::set<std::string> known = {
          "name",   "output", "avg_time", "noise", "p_succ",
          "observed_time_sum", "observed_time_count"};
      if (!known.count(it.key())) tool.extra[it.key()] = it.value();
    }
    reg.tools.push_back(std::move(tool));
  }
  return reg;
}

inline Registry registry_load(const std::string& path) {
  return registry_from_json(load_json_file(path), path);
}

inline Json registry_to_json(const Registry& reg) {
  Json doc;
  doc["schema"] = reg.schema;
  doc["lambda_per_second"] = reg.lambda_per_second;
  doc["fine_sigma_factor"] = reg.fine_sigma_factor;
  Json tools = Json::array();
  for (const auto& t : reg.tools) {
    Json jt;
    jt["name"] = t.name;
    jt["output"] = rep_kind_name(t.output);
    jt["avg_time"] = t.avg_time;
    if (t.noise.model != "none") {
      Json jn;
      jn["model"] = t.noise.model;
      jn["sigma"] = t.noise.sigma;
      if (t.noise.sigma_rot > 0.0) jn["sigma_rot"] = t.noise.sigma_rot;
      jt["noise"] = jn;
    }
    Json jp;
    for (const auto& [cls, p] : t.p_succ) jp[cls] = p;
    jt["p_succ"] = jp;
    if (t.time_count > 0) {
      jt["observed_time_sum"] = t.time_sum;
      jt["observed_time_count"] = t.time_count;
    }
    if (t.extra.is_object()) {
      for (auto it = t.extra.begin(); it != t.extra.end(); ++it) {
        jt[it.key()] = it.value();
      }
    }
    tools.push_back(jt);
  }
  doc["tools"] = tools;
  return doc;
}

// --- extraction --------------------------------------------------------------

enum class ExtractStatus { ok, occluded, failed, unsupported };

struct ExtractionResult {
  ExtractStatus status = ExtractStatus::failed;
  std::optional<RepresentationValue> value;
  double duration = 0.0;  // simulated seconds actually spent
  std::string tool;
  Granularity delivered = Granularity::coarse;
  std::string detail;  // human-readable failure reason
};

namespace detail {

inline double sample_duration(const ToolSpec& tool, Rng& rng) {
  const double noisy = tool.avg_time * (1.0 + 0.1 * rng.gaussian());
  return std::max(0.2 * tool.avg_time, noisy);
}

inline Vec3 gaussian_vec(Rng& rng, double sigma) {
  return {rng.gaussian(0.0, sigma), rng.gaussian(0.0, sigma),
          rng.gaussian(0.0, sigma)};
}

inline Rotation perturb_rotation(const Rotation& r, Rng& rng, double sigma_rot) {
  if (sigma_rot <= 0.0) return r;
  Vec3 axis;
  do {
    axis = {rng.gaussian(), rng.gaussian(), rng.gaussian()};
  } while (axis.norm() < 1e-9);
  const double angle = rng.gaussian(0.0, sigma_rot);
  return Rotation::from_axis_angle(axis, angle) * r;
}

inline RepresentationValue ground_truth(const SimWorld& world,
                                        const ToolSpec& tool,
                                        const Requirement& req) {
  switch (tool.output) {
    case RepKind::point:
      return PointValue{world.center_of(req.object_id, req.part)};
    case RepKind::point_set: {
      auto kps = world.keypoints_world(req.object_id, req.part);
      if (kps.empty()) kps.push_back(world.center_of(req.object_id, req.part));
      return PointSetValue{std::move(kps)};
    }
    case RepKind::vector:
      return world.vector_gt(req.object_id, req.part);
    case RepKind::pose:
      return PoseValue{world.frame_of(req.object_id, req.part)};
    case RepKind::region:
      return world.region_gt(req.object_id, req.part);
    case RepKind::topo_order:
      return world.topo_order(req.object_ids);
    case RepKind::state_machine_ref: {
      return StateMachineRefValue{world.machine_spec(req.object_id).id,
                                  world.machine_state(req.object_id)};
    }
  }
  throw Error("unreachable");
}

inline RepresentationValue add_noise(const RepresentationValue& gt,
                                     const ToolSpec& tool, double sigma_scale,
                                     Rng& rng) {
  if (tool.noise.model == "none") return gt;
  const double sigma = tool.noise.sigma * sigma_scale;
  const double sigma_rot = tool.noise.sigma_rot * sigma_scale;
  struct Visitor {
    Rng& rng;
    double sigma;
    double sigma_rot;
    RepresentationValue operator()(const PointValue& v) const {
      return PointValue{v.point + gaussian_vec(rng, sigma)};
    }
    RepresentationValue operator()(const PointSetValue& v) const {
      PointSetValue out;
      out.points.reserve(v.points.size());
      for (const auto& p : v.points) out.points.push_back(p + gaussian_vec(rng, sigma));
      return out;
    }
    RepresentationValue operator()(const VectorValue& v) const {
      // Noise enters through the two anchor measurements, as in a keypoint
      // pipeline; direction error scales linearly with sigma.
      const Point3 a = v.origin + gaussian_vec(rng, sigma);
      const Point3 b = v.origin + v.direction.vec() * 0.08 +
                       gaussian_vec(rng, sigma);
      return VectorValue{a, UnitVector3(b - a)};
    }
    RepresentationValue operator()(const PoseValue& v) const {
      return PoseValue{Pose(perturb_rotation(v.pose.rotation, rng, sigma_rot),
                            v.pose.translation + gaussian_vec(rng, sigma))};
    }
    RepresentationValue operator()(const RegionValue& v) const {
      return RegionValue{v.center + gaussian_vec(rng, sigma),
                         v.half_extent + Vec3{0.01, 0.01, 0.01}};
    }
    RepresentationValue operator()(const TopoOrderValue& v) const { return v; }
    RepresentationValue operator()(const StateMachineRefValue& v) const { return v; }
  };
  return std::visit(Visitor{rng, sigma, sigma_rot}, gt);
}

}  // namespace detail

// Converts a delivered value to the requirement's kind (point set -> centroid).
inline RepresentationValue adapt_value(const RepresentationValue& value,
                                       RepKind required) {
  const RepKind have = kind_of(value);
  if (have == required) return value;
  if (required == RepKind::point && have == RepKind::point_set) {
    return PointValue{centroid(std::get<PointSetValue>(value))};
  }
  throw TypeError(std::string("cannot adapt a ") + rep_kind_name(have) +
                  " representation to '" + rep_kind_name(required) + "'");
}

// Runs one tool against the simulated scene.  Spends simulated time on the
// world clock, draws visibility, then samples the tool's noise model around
// ground truth.  `sigma_scale` < 1 is the fine-granularity path.  With
// `advance_clock` false the call models a capture taken concurrently with
// motion: the duration is reported but the world clock does not move.
inline ExtractionResult run_tool(SimWorld& world, Registry& registry,
                                 const std::string& tool_name,
                                 const Requirement& req, Rng& rng,
                                 double sigma_scale = 1.0,
                                 bool advance_clock = true) {
  ToolSpec* tool = registry.find(tool_name);
  if (!tool) throw LookupError("unknown tool '" + tool_name + "'");
  ExtractionResult out;
  out.tool = tool_name;
  out.duration = detail::sample_duration(*tool, rng);
  if (advance_clock) world.advance_time(out.duration);
  tool->observe_duration(out.duration);
  if (!world.observe(rng)) {
    out.status = ExtractStatus::occluded;
    out.detail = "view occluded";
    return out;
  }
  const double p = tool->p_for_class(req.object_class);
  if (!rng.bernoulli(p)) {
    out.status = ExtractStatus::failed;
    out.detail = "tool produced no usable output";
    return out;
  }
  RepresentationValue gt = detail::ground_truth(world, *tool, req);
  out.value = detail::add_noise(gt, *tool, sigma_scale, rng);
  out.status = ExtractStatus::ok;
  return out;
}

// Crop-then-extract.  Selects a region tool for the crop, then the value tool
// inside it with scaled noise; returns `delivered = coarse` with the plain
// result when no region tool exists.
inline ExtractionResult extract_fine(SimWorld& world, Registry& registry,
                                     const std::string& tool_name,
                                     const Requirement& req, Rng& rng,
                                     const PSuccFn& p_succ_fn = default_p_succ) {
  Requirement region_req = req;
  region_req.kind = RepKind::region;
  region_req.granularity = Granularity::coarse;
  const auto region_sel = select_tool(registry, region_req, p_succ_fn);
  if (!region_sel) {
    ExtractionResult out = run_tool(world, registry, tool_name, req, rng, 1.0);
    out.delivered = Granularity::coarse;
    if (out.detail.empty()) out.detail = "no region tool; degraded to coarse";
    return out;
  }
  ExtractionResult crop =
      run_tool(world, registry, region_sel->tool, region_req, rng, 1.0);
  if (crop.status != ExtractStatus::ok) {
    crop.detail = "crop step: " + crop.detail;
    return crop;
  }
  ExtractionResult out = run_tool(world, registry, tool_name, req, rng,
                                  registry.fine_sigma_factor);
  out.duration += crop.duration;
  out.delivered = Granularity::fine;
  return out;
}

// Select-then-run for one requirement, honoring the granularity preference.
inline ExtractionResult extract(SimWorld& world, Registry& registry,
                                const Requirement& req, Rng& rng,
                                const PSuccFn& p_succ_fn = default_p_succ) {
  const auto sel = select_tool(registry, req, p_succ_fn);
  if (!sel) {
    ExtractionResult out;
    out.status = ExtractStatus::unsupported;
    out.detail = std::string("no tool in the registry can produce '") +
                 rep_kind_name(req.kind) + "' for class '" + req.object_class + "'";
    return out;
  }
  if (req.granularity == Granularity::fine) {
    return extract_fine(world, registry, sel->tool, req, rng, p_succ_fn);
  }
  ExtractionResult out = run_tool(world, registry, sel->tool, req, rng, 1.0);
  out.delivered = Granularity::coarse;
  return out;
}

}  // namespace trex
