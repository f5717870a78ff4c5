#pragma once

// Plan execution.
//
// A grounded plan is turned into motion in three steps per stage: bind the
// declared representations by running the selected extractors (waiting out
// occlusion during setup), solve the stage's constraints into a waypoint
// trajectory, and execute it while periodically re-extracting every
// non-attached binding.  A binding whose refresh keeps failing past the
// staleness budget is a tracking loss and fails the stage.
//
// Stage programs run first: they query state machines and manipulation
// order through the same extractor path, then decide which stages run and
// which objects fill the plan's slots.  Programs are straight-line, so
// execution always terminates.
//
// Failures carry one of five classes, mirrored in benchmark reports:
//   planning                 grounding produced no usable plan / program
//                            had no case for an observed state
//   toolkit_extraction       no capable extractor, or setup extraction ran
//                            out of retries
//   representation_tracking  a binding went stale during execution
//   action_generation        solver non-convergence, blocked paths, failed
//                            or wrong grasps
//   other                    completed but the goal predicate failed, or an
//                            unexpected error

#include <algorithm>
#include <exception>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "trex/cog.hpp"
#include "trex/sim.hpp"
#include "trex/solver.hpp"
#include "trex/toolkit.hpp"

namespace trex {

enum class FailureClass {
  none,
  planning,
  toolkit_extraction,
  representation_tracking,
  action_generation,
  other,
};

inline const char* failure_class_name(FailureClass c) {
  switch (c) {
    case FailureClass::none: return "none";
    case FailureClass::planning: return "planning";
    case FailureClass::toolkit_extraction: return "toolkit_extraction";
    case FailureClass::representation_tracking: return "representation_tracking";
    case FailureClass::action_generation: return "action_generation";
    case FailureClass::other: return "other";
  }
  throw Error("invalid failure class");
}

class StageFailure : public Error {
 public:
  StageFailure(FailureClass cls, const std::string& stage, const std::string& what)
      : Error("stage '" + stage + "': " + what), class_(cls), stage_(stage) {}
  FailureClass failure_class() const { return class_; }
  const std::string& stage() const { return stage_; }

 private:
  FailureClass class_;
  std::string stage_;
};

// Maps any error to a failure class.  Total: never throws.
inline FailureClass classify_failure(const std::exception& e) noexcept {
  if (const auto* sf = dynamic_cast<const StageFailure*>(&e)) {
    return sf->failure_class();
  }
  if (const auto* ge = dynamic_cast<const GroundingError*>(&e)) {
    return ge->phase() == "select" ? FailureClass::toolkit_extraction
                                   : FailureClass::planning;
  }
  if (dynamic_cast<const TypeError*>(&e) || dynamic_cast<const ParseError*>(&e)) {
    return FailureClass::planning;
  }
  return FailureClass::other;
}

struct TrackConfig {
  double period = 0.5;         // s between refresh attempts during motion
  double budget = 2.0;         // s a binding may stay stale before failing
  double setup_wait = 0.25;    // s waited out per occluded setup attempt
  double setup_timeout = 10.0; // s of setup waiting per binding
  int extract_retries = 2;     // extra attempts after a failed setup extract
};

struct PlannerConfig {
  SolverConfig solver;
  TrackConfig track;
};

struct StageReport {
  std::string name;
  double extraction_time = 0.0;  // tool-seconds, setup plus tracking
  double motion_time = 0.0;      // sim-clock seconds during the trajectory
  int track_refreshes = 0;
  int track_misses = 0;
  double solver_objective = 0.0;
  int solver_iterations = 0;
  bool solver_converged = false;
  std::map<std::string, std::string> binding_tool;
  std::map<std::string, std::string> binding_granularity;
};

struct ExecutionResult {
  bool completed = false;
  FailureClass failure = FailureClass::none;
  std::string failure_message;
  std::string failed_stage;
  std::vector<std::string> stage_order;  // resolved, post-program
  std::vector<StageReport> stages;
  std::map<std::string, std::string> program_bindings;  // state reads, slots
  double extraction_time = 0.0;
  double motion_time = 0.0;

  void add(const StageReport& r) {
    extraction_time += r.extraction_time;
    motion_time += r.motion_time;
    stages.push_back(r);
  }
};

namespace planner_detail {

struct LiveBinding {
  std::string name;
  Requirement req;
  std::string tool;
  double sigma_scale = 1.0;
  BoundRep bound;
};

inline Requirement make_requirement(const GroundedRef& ref, const Scene& scene) {
  Requirement req;
  req.kind = ref.kind;
  req.object_id = ref.object_id;
  req.part = ref.part;
  req.granularity = ref.granularity;
  req.object_ids = ref.object_ids;
  req.object_class = ref.kind == RepKind::topo_order
                         ? "*"
                         : scene.require(ref.object_id).class_name;
  return req;
}

// Setup extraction: occlusion is waited out (the robot is not moving yet),
// tool failures get a bounded number of retries.
inline ExtractionResult setup_extract(SimWorld& world, Registry& registry,
                                      const std::string& tool,
                                      const Requirement& req, Rng& rng,
                                      const TrackConfig& track,
                                      const std::string& stage,
                                      const PSuccFn& p_succ_fn,
                                      double& extraction_time) {
  double waited = 0.0;
  int failures = 0;
  for (;;) {
    ExtractionResult r =
        req.granularity == Granularity::fine
            ? extract_fine(world, registry, tool, req, rng, p_succ_fn)
            : run_tool(world, registry, tool, req, rng, 1.0);
    extraction_time += r.duration;
    switch (r.status) {
      case ExtractStatus::ok:
        return r;
      case ExtractStatus::occluded:
        waited += track.setup_wait;
        if (waited > track.setup_timeout) {
          throw StageFailure(FailureClass::toolkit_extraction, stage,
                             "'" + req.object_id +
                                 "' stayed occluded through setup");
        }
        world.advance_time(track.setup_wait);
        break;
      case ExtractStatus::failed:
        if (++failures > track.extract_retries) {
          throw StageFailure(FailureClass::toolkit_extraction, stage,
                             "extractor '" + tool + "' kept failing: " + r.detail);
        }
        break;
      case ExtractStatus::unsupported:
        throw StageFailure(FailureClass::toolkit_extraction, stage, r.detail);
    }
  }
}

inline std::string substitute_slot(const std::string& id,
                                   const std::map<std::string, std::string>& slots,
                                   const std::string& stage) {
  if (id.empty() || id[0] != '$') return id;
  auto it = slots.find(id.substr(1));
  if (it == slots.end()) {
    throw StageFailure(FailureClass::planning, stage,
                       "slot '" + id + "' was never bound by the program");
  }
  return it->second;
}

inline StageSpec resolve_stage(const StageSpec& spec,
                               const std::map<std::string, std::string>& slots,
                               const Scene& scene, const Registry& registry,
                               const PSuccFn& p_succ_fn) {
  StageSpec out = spec;
  for (auto& c : out.constraints) {
    for (auto& ref : c.refs) {
      const bool was_slot = ref.is_slot();
      ref.object_id = substitute_slot(ref.object_id, slots, spec.name);
      for (auto& id : ref.object_ids) id = substitute_slot(id, slots, spec.name);
      if (was_slot || ref.tool.empty()) {
        const Requirement req = make_requirement(ref, scene);
        const auto sel = select_tool(registry, req, p_succ_fn);
        if (!sel) {
          throw StageFailure(FailureClass::toolkit_extraction, spec.name,
                             "no extractor can produce '" +
                                 std::string(rep_kind_name(ref.kind)) +
                                 "' for '" + ref.object_id + "'");
        }
        ref.tool = sel->tool;
      }
    }
  }
  return out;
}

}  // namespace planner_detail

// Runs every stage of the plan against the world.  Returns a result in all
// cases; failures are captured with their class, never thrown.
inline ExecutionResult execute_plan(SimWorld& world, Registry& registry,
                                    const GroundedPlan& plan, Rng& rng,
                                    const PlannerConfig& cfg = {},
                                    const PSuccFn& p_succ_fn = default_p_succ) {
  ExecutionResult result;
  std::map<std::string, std::string> slots;
  std::vector<std::string> order;

  try {
    // Stage program: decide the stage order and fill slots.
    if (plan.program.empty()) {
      for (const auto& s : plan.stages) order.push_back(s.name);
    } else {
      std::map<std::string, std::string> state_reads;
      for (const auto& step : plan.program) {
        if (step.op == "query_state") {
          Requirement req;
          req.kind = RepKind::state_machine_ref;
          req.object_id = step.object_id;
          req.object_class = world.scene().require(step.object_id).class_name;
          const auto sel = select_tool(registry, req, p_succ_fn);
          if (!sel) {
            throw StageFailure(FailureClass::toolkit_extraction, "<program>",
                               "no extractor reads state machines");
          }
          const ExtractionResult r = planner_detail::setup_extract(
              world, registry, sel->tool, req, rng, cfg.track, "<program>",
              p_succ_fn, result.extraction_time);
          const auto& sm = std::get<StateMachineRefValue>(*r.value);
          state_reads[step.binding] = sm.state;
          result.program_bindings[step.binding] = sm.state;
        } else if (step.op == "branch_state") {
          auto rd = state_reads.find(step.binding);
          if (rd == state_reads.end()) {
            throw StageFailure(FailureClass::planning, "<program>",
                               "branch on unread binding '" + step.binding + "'");
          }
          auto cs = step.cases.find(rd->second);
          if (cs == step.cases.end()) {
            throw StageFailure(FailureClass::planning, "<program>",
                               "program has no case for state '" + rd->second + "'");
          }
          for (const auto& n : cs->second) order.push_back(n);
        } else if (step.op == "order_by") {
          Requirement req;
          req.kind = RepKind::topo_order;
          req.object_ids = step.objects;
          req.object_class = "*";
          const auto sel = select_tool(registry, req, p_succ_fn);
          if (!sel) {
            throw StageFailure(FailureClass::toolkit_extraction, "<program>",
                               "no extractor orders objects");
          }
          const ExtractionResult r = planner_detail::setup_extract(
              world, registry, sel->tool, req, rng, cfg.track, "<program>",
              p_succ_fn, result.extraction_time);
          const auto& topo = std::get<TopoOrderValue>(*r.value);
          if (topo.object_ids.size() != step.slots.size()) {
            throw StageFailure(FailureClass::toolkit_extraction, "<program>",
                               "ordering result does not cover the object set");
          }
          for (std::size_t i = 0; i < step.slots.size(); ++i) {
            slots[step.slots[i]] = topo.object_ids[i];
            result.program_bindings[step.slots[i]] = topo.object_ids[i];
          }
        } else if (step.op == "run_stages") {
          for (const auto& n : step.stages) order.push_back(n);
        }
      }
    }
    result.stage_order = order;

    std::size_t stage_index = 0;
    for (const auto& stage_name : order) {
      const StageSpec* spec = plan.find_stage(stage_name);
      if (!spec) {
        throw StageFailure(FailureClass::planning, stage_name,
                           "plan has no such stage");
      }
      const StageSpec stage = planner_detail::resolve_stage(
          *spec, slots, world.scene(), registry, p_succ_fn);
      StageReport report;
      report.name = stage.name;

      // Compile constraints against the stage's binding environment.
      TypeEnv env;
      for (const auto& c : stage.constraints) {
        for (const auto& ref : c.refs) env[ref.binding] = ref.kind;
      }
      std::vector<Constraint> subgoals;
      std::vector<Constraint> path;
      for (const auto& c : stage.constraints) {
        Constraint compiled = compile_constraint(c.id, c.kind, c.expr, env,
                                                 c.tolerance, c.weight);
        (c.kind == ConstraintKind::subgoal ? subgoals : path)
            .push_back(std::move(compiled));
      }

      // Setup extraction for every binding.
      std::vector<planner_detail::LiveBinding> bindings;
      std::set<std::string> referenced_objects;
      for (const auto& c : stage.constraints) {
        for (const auto& ref : c.refs) {
          planner_detail::LiveBinding live;
          live.name = ref.binding;
          live.req = planner_detail::make_requirement(ref, world.scene());
          live.tool = ref.tool;
          const ExtractionResult r = planner_detail::setup_extract(
              world, registry, ref.tool, live.req, rng, cfg.track, stage.name,
              p_succ_fn, report.extraction_time);
          live.sigma_scale =
              r.delivered == Granularity::fine ? registry.fine_sigma_factor : 1.0;
          live.bound.value = adapt_value(*r.value, ref.kind);
          live.bound.tool = r.tool;
          live.bound.captured_at = world.sim_time();
          if (world.attached() && ref.kind != RepKind::topo_order &&
              *world.attached() == ref.object_id) {
            live.bound.attached = true;
            live.bound.ee_at_extraction = world.ee_pose();
          }
          report.binding_tool[ref.binding] = r.tool;
          report.binding_granularity[ref.binding] = granularity_name(r.delivered);
          if (ref.kind != RepKind::topo_order) {
            referenced_objects.insert(ref.object_id);
          }
          bindings.push_back(std::move(live));
        }
      }

      // Solve the stage into a trajectory.
      SolveRequest solve_req;
      solve_req.subgoals = subgoals;
      solve_req.path = path;
      for (const auto& b : bindings) solve_req.context.reps[b.name] = b.bound;
      solve_req.start = world.ee_pose();
      solve_req.gripper_end = stage.gripper_end;
      solve_req.workspace = world.workspace();
      for (const auto& obj : world.scene().objects) {
        if (world.attached() && *world.attached() == obj.id) continue;
        if (referenced_objects.count(obj.id)) continue;
        solve_req.obstacles.push_back(
            OrientedBox{obj.pose, obj.extent * 0.5});
      }
      if (world.attached()) {
        const Vec3 e = world.scene().require(*world.attached()).extent;
        solve_req.body.radius = 0.5 * e.norm();
      }
      solve_req.approach_from_above = stage.gripper_end != Gripper::hold;
      Rng solver_rng = rng.derive("solve", stage_index++);
      const SolveResult sol = solve(solve_req, cfg.solver, solver_rng);
      report.solver_objective = sol.objective;
      report.solver_iterations = sol.iterations;
      report.solver_converged = sol.converged;
      if (!sol.converged) {
        result.add(report);
        throw StageFailure(FailureClass::action_generation, stage.name,
                           "solver did not reach constraint tolerances");
      }
      if (!sol.feasible) {
        result.add(report);
        throw StageFailure(FailureClass::action_generation, stage.name,
                           "no clear path to the stage target");
      }

      // Execute with periodic representation tracking.  The staleness clock
      // starts at motion onset: setup values are the freshest available, and
      // the budget polices refreshes during motion, not setup duration.
      const double t0 = world.sim_time();
      double last_track = t0;
      for (auto& b : bindings) b.bound.captured_at = t0;
      for (const auto& wp : sol.trajectory.waypoints) {
        world.execute_waypoint(wp);
        while (world.sim_time() - last_track >= cfg.track.period) {
          last_track += cfg.track.period;
          for (auto& b : bindings) {
            if (b.bound.attached) continue;  // rides the gripper, always fresh
            ExtractionResult r =
                run_tool(world, registry, b.tool, b.req, rng, b.sigma_scale,
                         /*advance_clock=*/false);
            report.extraction_time += r.duration;
            if (r.status == ExtractStatus::ok) {
              b.bound.value = adapt_value(*r.value, b.req.kind);
              b.bound.captured_at = world.sim_time();
              ++report.track_refreshes;
            } else {
              ++report.track_misses;
              if (world.sim_time() - b.bound.captured_at > cfg.track.budget) {
                report.motion_time += world.sim_time() - t0;
                result.add(report);
                throw StageFailure(FailureClass::representation_tracking,
                                   stage.name,
                                   "lost track of '" + b.name + "' (stale " +
                                       std::to_string(world.sim_time() -
                                                      b.bound.captured_at) +
                                       "s)");
              }
            }
          }
        }
      }
      report.motion_time += world.sim_time() - t0;

      // A grasp stage must end holding one of its referenced objects.
      if (stage.gripper_end == Gripper::close) {
        if (!world.attached()) {
          result.add(report);
          throw StageFailure(FailureClass::action_generation, stage.name,
                             "gripper closed on nothing");
        }
        if (!referenced_objects.empty() &&
            !referenced_objects.count(*world.attached())) {
          result.add(report);
          throw StageFailure(FailureClass::action_generation, stage.name,
                             "grasped '" + *world.attached() +
                                 "' instead of a stage target");
        }
      }
      result.add(report);
    }
    result.completed = true;
  } catch (const StageFailure& e) {
    result.failure = e.failure_class();
    result.failure_message = e.what();
    result.failed_stage = e.stage();
  } catch (const Error& e) {
    result.failure = FailureClass::other;
    result.failure_message = e.what();
  }
  return result;
}

}  // namespace trex
