#pragma once

// Goal predicates.
//
// Task files end with a "success" JSON object the benchmark evaluates against
// simulator ground truth after execution.  Predicates read the true world
// state, never the plan's noisy bindings, so a success verdict cannot be an
// artifact of extraction error.
//
//   {"all": [p...]}                          every predicate holds
//   {"any": [p...]}                          at least one holds
//   {"pred": "on", "top": a, "bottom": b}    a rests directly on b
//   {"pred": "on_table", "object": a}        a rests on the table surface
//   {"pred": "near", "a": x, "b": y,         xy center distance within
//    "max_xy": d [, "min_xy": d2]}           [min_xy, max_xy]
//   {"pred": "orientation_match",            frame geodesic angle <= tol
//    "a": x, "b": y, "tol": rad
//    [, "axis": "x|y|z"]}                    or: angle between that axis pair
//   {"pred": "state", "object": a,           state machine sits in `value`
//    "value": s}
//   {"pred": "inside", "object": a,          a's center within b's bounds,
//    "container": b [, "expand": m]}         grown by `expand` meters
//   {"pred": "holding", "object": a}         gripper carries a
//   {"pred": "hand_empty"}                   gripper carries nothing

#include <algorithm>
#include <cmath>
#include <string>

#include "trex/json_io.hpp"
#include "trex/sim.hpp"

namespace trex {

struct SuccessOutcome {
  bool ok = true;
  std::string unmet;  // description of the first failing predicate

  explicit operator bool() const { return ok; }
};

namespace success_detail {

inline double xy_distance(const Point3& a, const Point3& b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return std::sqrt(dx * dx + dy * dy);
}

inline int axis_index(const std::string& name, const std::string& where) {
  if (name == "x") return 0;
  if (name == "y") return 1;
  if (name == "z") return 2;
  throw ParseError(where + ": axis must be x, y, or z");
}

}  // namespace success_detail

inline SuccessOutcome evaluate_success(const SimWorld& world, const Json& spec) {
  if (!spec.is_object()) throw ParseError("success spec must be an object");

  if (spec.contains("all") || spec.contains("any")) {
    const bool conjunctive = spec.contains("all");
    const Json& arr = spec[conjunctive ? "all" : "any"];
    if (!arr.is_array() || arr.empty()) {
      throw ParseError("success combinator needs a non-empty array");
    }
    SuccessOutcome last;
    for (const Json& sub : arr) {
      last = evaluate_success(world, sub);
      if (conjunctive && !last.ok) return last;
      if (!conjunctive && last.ok) return last;
    }
    if (!conjunctive && !last.ok) {
      last.unmet = "no alternative held (last: " + last.unmet + ")";
    }
    return last;
  }

  const std::string pred = require_string(spec, "pred", "success spec");
  SuccessOutcome out;

  if (pred == "on") {
    const std::string top = require_string(spec, "top", "on");
    const std::string bottom = require_string(spec, "bottom", "on");
    world.scene().require(top);
    world.scene().require(bottom);
    if (!world.is_on(top, bottom)) {
      out.ok = false;
      out.unmet = "'" + top + "' is not resting on '" + bottom + "'";
    }
    return out;
  }
  if (pred == "on_table") {
    const std::string id = require_string(spec, "object", "on_table");
    world.scene().require(id);
    if (!world.resting_on_table(id)) {
      out.ok = false;
      out.unmet = "'" + id + "' is not resting on the table";
    }
    return out;
  }
  if (pred == "near") {
    const std::string a = require_string(spec, "a", "near");
    const std::string b = require_string(spec, "b", "near");
    const double max_xy = require_number(spec, "max_xy", "near");
    const double min_xy = spec.value("min_xy", 0.0);
    const double d = success_detail::xy_distance(world.center_of(a), world.center_of(b));
    if (d > max_xy || d < min_xy) {
      out.ok = false;
      out.unmet = "'" + a + "' is " + std::to_string(d) + " m from '" + b +
                  "' (wanted [" + std::to_string(min_xy) + ", " +
                  std::to_string(max_xy) + "])";
    }
    return out;
  }
  if (pred == "orientation_match") {
    const std::string a = require_string(spec, "a", "orientation_match");
    const std::string b = require_string(spec, "b", "orientation_match");
    const double tol = require_number(spec, "tol", "orientation_match");
    double angle;
    if (spec.contains("axis")) {
      const int ax = success_detail::axis_index(
          spec["axis"].get<std::string>(), "orientation_match");
      const Vec3 va = world.frame_of(a).rotation.axis(ax);
      const Vec3 vb = world.frame_of(b).rotation.axis(ax);
      const double c = std::clamp(dot(va, vb), -1.0, 1.0);
      angle = std::acos(c);
    } else {
      angle = rotation_geodesic(world.frame_of(a).rotation,
                                world.frame_of(b).rotation);
    }
    if (angle > tol) {
      out.ok = false;
      out.unmet = "'" + a + "' and '" + b + "' differ by " +
                  std::to_string(angle) + " rad (tol " + std::to_string(tol) + ")";
    }
    return out;
  }
  if (pred == "state") {
    const std::string id = require_string(spec, "object", "state");
    const std::string want = require_string(spec, "value", "state");
    const std::string& got = world.machine_state(id);
    if (got != want) {
      out.ok = false;
      out.unmet = "'" + id + "' is in state '" + got + "', wanted '" + want + "'";
    }
    return out;
  }
  if (pred == "inside") {
    const std::string id = require_string(spec, "object", "inside");
    const std::string container = require_string(spec, "container", "inside");
    const double expand = spec.value("expand", 0.0);
    const SceneObject& c = world.scene().require(container);
    Aabb box = world_aabb(c.pose, c.extent);
    box.min = box.min - Vec3{expand, expand, expand};
    box.max = box.max + Vec3{expand, expand, expand};
    const Point3 p = world.center_of(id);
    if (!box.contains(p)) {
      out.ok = false;
      out.unmet = "'" + id + "' is not inside '" + container + "'";
    }
    return out;
  }
  if (pred == "holding") {
    const std::string id = require_string(spec, "object", "holding");
    world.scene().require(id);
    if (!world.attached() || *world.attached() != id) {
      out.ok = false;
      out.unmet = "gripper is not holding '" + id + "'";
    }
    return out;
  }
  if (pred == "hand_empty") {
    if (world.attached()) {
      out.ok = false;
      out.unmet = "gripper is still holding '" + *world.attached() + "'";
    }
    return out;
  }
  throw ParseError("unknown success predicate '" + pred + "'");
}

}  // namespace trex
