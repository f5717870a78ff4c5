#pragma once

// Waypoint solver: turns compiled constraints into an end-effector
// trajectory.
//
// Two phases.  First the terminal pose is optimized by restarted projected
// subgradient descent on the hinged sum of subgoal costs, with central-
// difference gradients over the 6-dim pose tangent (translation + world-frame
// rotation).  Then interior waypoints are laid out along the start-to-
// terminal path (optionally via an approach point above the terminal) and
// relaxed against path-constraint costs plus a smoothness term.
//
// Workspace bounds and obstacle clearance are hard feasibility filters, not
// weighted costs: every accepted iterate is projected back into the feasible
// set, and a deterministic post-pass repairs colliding path segments by
// lifting them over the offending obstacle.  `feasible` reports whether that
// succeeded; it is never traded against constraint cost.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include "trex/constraint_dsl.hpp"
#include "trex/geometry.hpp"
#include "trex/rng.hpp"

namespace trex {

struct SolverConfig {
  int waypoints = 8;       // trajectory length, terminal included
  int restarts = 4;        // independent descent starts for the terminal
  int max_iters = 150;     // descent iterations per restart
  int smooth_sweeps = 12;  // interior relaxation sweeps
  int densify = 4;         // collision samples per segment
  double fd_step = 1e-5;
  double init_step = 0.05;
  double min_step = 1e-10;
  double smoothness_weight = 0.5;
  double margin = 0.01;           // clearance kept from obstacles/workspace
  double approach_height = 0.10;  // via point height for grasp/place stages
  double restart_pos_sigma = 0.05;
  double restart_rot_sigma = 0.3;
  bool early_exit = true;  // stop restarting once converged
};

// The moving body is abstracted as a sphere at the gripper point; carrying an
// object grows the radius.
struct MovingBody {
  double radius = 0.0;
};

struct SolveRequest {
  std::vector<Constraint> subgoals;
  std::vector<Constraint> path;
  EvalContext context;  // bindings; .ee is overwritten by candidates
  Pose start;
  Gripper gripper_end = Gripper::hold;
  Aabb workspace;
  std::vector<OrientedBox> obstacles;
  MovingBody body;
  bool approach_from_above = false;
};

struct SolveResult {
  Trajectory trajectory;  // excludes the start pose; last waypoint is terminal
  Pose terminal;
  double objective = std::numeric_limits<double>::infinity();
  double worst_cost = -std::numeric_limits<double>::infinity();
  bool converged = false;  // every subgoal cost at or below its tolerance
  bool feasible = false;   // workspace and clearance hold on the sampled path
  int iterations = 0;
  int restarts_used = 0;
  std::map<std::string, double> terminal_costs;
};

namespace solver_detail {

inline Pose apply_tangent(const Pose& p, const std::array<double, 6>& d,
                          double scale) {
  Pose out;
  out.translation = p.translation + Vec3{d[0], d[1], d[2]} * scale;
  out.rotation =
      Rotation::exp(Vec3{d[3], d[4], d[5]} * scale) * p.rotation;
  return out;
}

inline double tangent_norm(const std::array<double, 6>& d) {
  double s = 0.0;
  for (double v : d) s += v * v;
  return std::sqrt(s);
}

// Workspace containment uses the bare margin (reach is independent of what
// is carried); obstacle clearance grows with the body radius.  Obstacles
// already in contact with the start pose (the support just grasped from, the
// object just released) are exempt inside a departure bubble around the
// start, otherwise every stage after a grasp would begin in collision.
struct Feasibility {
  const Aabb& workspace;
  const std::vector<OrientedBox>& obstacles;
  double margin;     // workspace clearance
  double clearance;  // obstacle clearance: margin + body radius
  Point3 start;
  std::vector<char> touching_start;
  double bubble = 0.0;

  void init_departure(const Point3& s) {
    start = s;
    bubble = std::max(2.0 * clearance, 0.08);
    touching_start.assign(obstacles.size(), 0);
    for (std::size_t k = 0; k < obstacles.size(); ++k) {
      if (obstacles[k].distance(s) < clearance) touching_start[k] = 1;
    }
  }

  bool exempt(std::size_t k, const Point3& p) const {
    return touching_start[k] && (p - start).norm() < bubble;
  }

  bool clear(const Point3& p) const {
    if (!workspace.contains(p, margin)) return false;
    for (std::size_t k = 0; k < obstacles.size(); ++k) {
      if (exempt(k, p)) continue;
      if (obstacles[k].distance(p) < clearance) return false;
    }
    return true;
  }

  Point3 project(Point3 p) const {
    p = workspace.clamp(p, margin);
    for (std::size_t k = 0; k < obstacles.size(); ++k) {
      const auto& obs = obstacles[k];
      if (exempt(k, p)) continue;
      if (obs.distance(p) >= clearance) continue;
      // Push out through the nearest face in the obstacle's frame.
      const Point3 local = transform_point(pose_inverse(obs.pose), p);
      const Vec3 h = obs.half;
      const double exit_x = h.x + clearance - std::abs(local.x);
      const double exit_y = h.y + clearance - std::abs(local.y);
      const double exit_z = h.z + clearance - std::abs(local.z);
      Point3 fixed = local;
      if (exit_x <= exit_y && exit_x <= exit_z) {
        fixed.x = (local.x < 0.0 ? -1.0 : 1.0) * (h.x + clearance);
      } else if (exit_y <= exit_z) {
        fixed.y = (local.y < 0.0 ? -1.0 : 1.0) * (h.y + clearance);
      } else {
        fixed.z = (local.z < 0.0 ? -1.0 : 1.0) * (h.z + clearance);
      }
      p = transform_point(obs.pose, fixed);
      p = workspace.clamp(p, margin);
    }
    return p;
  }

  Pose project(const Pose& pose) const {
    return Pose(pose.rotation, project(pose.translation));
  }
};

// Hinged sum: negative costs are already satisfied and must not subsidize
// unsatisfied ones.
inline double hinged_total(const std::vector<Constraint>& cs, EvalContext& ctx,
                           const Pose& ee) {
  ctx.ee = ee;
  double total = 0.0;
  for (const auto& c : cs) total += std::max(evaluate_cost(c, ctx), 0.0);
  return total;
}

inline std::array<double, 6> objective_gradient(
    const std::vector<Constraint>& cs, EvalContext& ctx, const Pose& ee,
    double h) {
  std::array<double, 6> g{};
  for (int dim = 0; dim < 6; ++dim) {
    const double above = hinged_total(cs, ctx, perturb_pose(ee, dim, h));
    const double below = hinged_total(cs, ctx, perturb_pose(ee, dim, -h));
    g[static_cast<std::size_t>(dim)] = (above - below) / (2.0 * h);
  }
  return g;
}

struct DescentOutcome {
  Pose pose;
  double objective = 0.0;
  int iterations = 0;
};

inline DescentOutcome descend(const std::vector<Constraint>& cs,
                              EvalContext& ctx, Pose x,
                              const Feasibility& feas,
                              const SolverConfig& cfg) {
  x = feas.project(x);
  double fx = hinged_total(cs, ctx, x);
  double step = cfg.init_step;
  int iter = 0;
  for (; iter < cfg.max_iters && fx > 0.0; ++iter) {
    const auto g = objective_gradient(cs, ctx, x, cfg.fd_step);
    std::array<double, 6> dir{};
    const double gn = tangent_norm(g);
    if (gn < 1e-14) break;
    for (std::size_t i = 0; i < 6; ++i) dir[i] = -g[i] / gn;
    bool accepted = false;
    while (step >= cfg.min_step) {
      const Pose cand = feas.project(apply_tangent(x, dir, step));
      const double fc = hinged_total(cs, ctx, cand);
      if (fc < fx - 1e-15) {
        x = cand;
        fx = fc;
        step = std::min(step * 1.5, 0.25);
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
  }
  return {x, fx, iter};
}

}  // namespace solver_detail

inline SolveResult solve(const SolveRequest& req, const SolverConfig& cfg,
                         Rng& rng) {
  if (cfg.waypoints < 1) throw Error("solver needs at least one waypoint");
  solver_detail::Feasibility feas{req.workspace, req.obstacles, cfg.margin,
                                  cfg.margin + req.body.radius};
  feas.init_departure(req.start.translation);
  EvalContext ctx = req.context;

  SolveResult best;
  // Terminal pose: restarted descent on the subgoal objective.
  for (int k = 0; k < cfg.restarts; ++k) {
    Rng restart_rng = rng.derive("restart", static_cast<std::uint64_t>(k));
    Pose seed = req.start;
    if (k > 0) {
      seed.translation = seed.translation +
                         Vec3{restart_rng.gaussian(0.0, cfg.restart_pos_sigma),
                              restart_rng.gaussian(0.0, cfg.restart_pos_sigma),
                              restart_rng.gaussian(0.0, cfg.restart_pos_sigma)};
      Vec3 axis{restart_rng.gaussian(), restart_rng.gaussian(),
                restart_rng.gaussian()};
      if (axis.norm() > 1e-9) {
        seed.rotation = Rotation::from_axis_angle(
                            axis, restart_rng.gaussian(0.0, cfg.restart_rot_sigma)) *
                        seed.rotation;
      }
    }
    const auto outcome = solver_detail::descend(req.subgoals, ctx, seed, feas, cfg);

    ctx.ee = outcome.pose;
    double worst = -std::numeric_limits<double>::infinity();
    bool conv = true;
    std::map<std::string, double> costs;
    for (const auto& c : req.subgoals) {
      const double v = evaluate_cost(c, ctx);
      costs[c.id] = v;
      worst = std::max(worst, v);
      conv = conv && v <= c.tolerance;
    }
    if (req.subgoals.empty()) {
      worst = 0.0;
      conv = true;
    }
    const bool better =
        !best.restarts_used ||
        std::make_pair(!conv, outcome.objective) <
            std::make_pair(!best.converged, best.objective);
    if (better) {
      best.terminal = outcome.pose;
      best.objective = outcome.objective;
      best.worst_cost = worst;
      best.converged = conv;
      best.terminal_costs = std::move(costs);
      best.iterations = outcome.iterations;
    }
    best.restarts_used = k + 1;
    if (cfg.early_exit && best.converged) break;
  }

  // Waypoint layout along the (possibly via-point) polyline.
  std::vector<Pose> anchors;
  anchors.push_back(req.start);
  if (req.approach_from_above) {
    Pose via = best.terminal;
    via.translation.z += cfg.approach_height;
    anchors.push_back(feas.project(via));
  }
  anchors.push_back(best.terminal);

  std::vector<double> seg_len;
  double total_len = 0.0;
  for (std::size_t i = 1; i < anchors.size(); ++i) {
    const double L =
        (anchors[i].translation - anchors[i - 1].translation).norm() + 1e-9;
    seg_len.push_back(L);
    total_len += L;
  }
  auto along = [&](double s) {  // s in [0, 1] by arc length
    double want = s * total_len;
    for (std::size_t i = 0; i < seg_len.size(); ++i) {
      if (want <= seg_len[i] || i + 1 == seg_len.size()) {
        return interpolate(anchors[i], anchors[i + 1],
                           std::clamp(want / seg_len[i], 0.0, 1.0));
      }
      want -= seg_len[i];
    }
    return anchors.back();
  };

  const int W = cfg.waypoints;
  std::vector<Pose> wps;
  wps.reserve(static_cast<std::size_t>(W));
  for (int i = 1; i <= W; ++i) {
    wps.push_back(along(static_cast<double>(i) / W));
  }
  wps.back() = best.terminal;

  // Interior relaxation: path costs plus smoothness, terminal pinned.
  if (W > 1 && (!req.path.empty() || req.approach_from_above)) {
    auto local_obj = [&](int i, const Pose& cand) {
      double f = 0.0;
      const Pose& prev = i == 0 ? req.start : wps[static_cast<std::size_t>(i) - 1];
      const Pose& next = wps[static_cast<std::size_t>(i) + 1];
      f += cfg.smoothness_weight *
           ((cand.translation - prev.translation).squared_norm() +
            (next.translation - cand.translation).squared_norm());
      if (!req.path.empty()) {
        for (int j = 0; j <= 2; ++j) {
          const Pose sample = interpolate(prev, cand, 0.5 + 0.25 * j);
          ctx.ee = j == 2 ? cand : sample;
          for (const auto& c : req.path) {
            f += c.weight * std::max(evaluate_cost(c, ctx), 0.0);
          }
        }
      }
      return f;
    };
    for (int sweep = 0; sweep < cfg.smooth_sweeps; ++sweep) {
      bool changed = false;
      for (int i = 0; i + 1 < W; ++i) {
        Pose x = wps[static_cast<std::size_t>(i)];
        double fx = local_obj(i, x);
        double step = 0.02;
        for (int it = 0; it < 10 && step > 1e-6; ++it) {
          std::array<double, 6> g{};
          for (int dim = 0; dim < 6; ++dim) {
            g[static_cast<std::size_t>(dim)] =
                (local_obj(i, perturb_pose(x, dim, cfg.fd_step)) -
                 local_obj(i, perturb_pose(x, dim, -cfg.fd_step))) /
                (2.0 * cfg.fd_step);
          }
          const double gn = solver_detail::tangent_norm(g);
          if (gn < 1e-12) break;
          std::array<double, 6> dir{};
          for (std::size_t d = 0; d < 6; ++d) dir[d] = -g[d] / gn;
          const Pose cand =
              feas.project(solver_detail::apply_tangent(x, dir, step));
          const double fc = local_obj(i, cand);
          if (fc < fx - 1e-15) {
            x = cand;
            fx = fc;
            changed = true;
          } else {
            step *= 0.5;
          }
        }
        wps[static_cast<std::size_t>(i)] = x;
      }
      if (!changed) break;
    }
  }

  // Collision repair: lift offending segments over the obstacle, then verify.
  auto segment_blocked = [&](const Pose& a, const Pose& b,
                             const OrientedBox** hit) -> bool {
    for (int j = 1; j <= cfg.densify; ++j) {
      const Pose s =
          interpolate(a, b, static_cast<double>(j) / cfg.densify);
      if (!req.workspace.contains(s.translation, 0.0)) {
        *hit = nullptr;
        return true;
      }
      for (std::size_t k = 0; k < req.obstacles.size(); ++k) {
        if (feas.exempt(k, s.translation)) continue;
        if (req.obstacles[k].distance(s.translation) < feas.clearance) {
          *hit = &req.obstacles[k];
          return true;
        }
      }
    }
    return false;
  };
  for (int pass = 0; pass < 4; ++pass) {
    bool repaired = false;
    for (int i = 0; i < W; ++i) {
      const Pose& a = i == 0 ? req.start : wps[static_cast<std::size_t>(i) - 1];
      const Pose& b = wps[static_cast<std::size_t>(i)];
      const OrientedBox* hit = nullptr;
      if (!segment_blocked(a, b, &hit) || hit == nullptr) continue;
      const Aabb box = hit->bounds();
      const double lift = box.max.z + cfg.margin + req.body.radius + 0.02;
      for (int side = i - 1; side <= i; ++side) {
        if (side < 0 || side >= W - 1) continue;  // never move start or terminal
        Pose& w = wps[static_cast<std::size_t>(side)];
        if (w.translation.z < lift) {
          w.translation.z = lift;
          w = feas.project(w);
          repaired = true;
        }
      }
    }
    if (!repaired) break;
  }

  best.feasible = true;
  for (int i = 0; i < W && best.feasible; ++i) {
    const Pose& a = i == 0 ? req.start : wps[static_cast<std::size_t>(i) - 1];
    const Pose& b = wps[static_cast<std::size_t>(i)];
    const OrientedBox* hit = nullptr;
    if (segment_blocked(a, b, &hit)) best.feasible = false;
  }
  if (!feas.clear(best.terminal.translation)) best.feasible = false;

  best.trajectory.waypoints.clear();
  for (int i = 0; i < W; ++i) {
    Waypoint wp;
    wp.pose = wps[static_cast<std::size_t>(i)];
    wp.gripper = (i + 1 == W) ? req.gripper_end : Gripper::hold;
    best.trajectory.waypoints.push_back(wp);
  }
  return best;
}

}  // namespace trex
