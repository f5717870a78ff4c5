#pragma once

// Instruction grounding.
//
// Grounding turns a natural-language instruction into a typed plan: stages,
// declared representation bindings, cost-expression constraints, and an
// optional stage program for state- or order-dependent tasks.  It runs as a
// chain of validated phases:
//
//   decompose    instruction -> stages (descriptions, hints, gripper intent)
//                               and the stage program, if any
//   constraints  stage -> constraint statements with typed object bindings
//   select       binding -> extractor chosen from the registry by utility
//   emit         statement -> cost expression, compiled and type-checked
//
// Each phase's response is validated against its schema; an invalid response
// is retried with the validation error attached, so a flaky producer gets a
// chance to repair itself.  The single-shot path asks for the whole plan in
// one unvalidated-intermediate step with no retry, trading that robustness
// away; it exists as the degraded comparison mode.
//
// Backends only ever return data.  Emitted expressions are parsed by the
// sandboxed constraint language; nothing a backend returns is executed.

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "trex/constraint_dsl.hpp"
#include "trex/scene.hpp"
#include "trex/toolkit.hpp"

namespace trex {

class GroundingError : public Error {
 public:
  GroundingError(const std::string& phase, const std::string& what)
      : Error("grounding phase '" + phase + "': " + what), phase_(phase) {}
  const std::string& phase() const { return phase_; }

 private:
  std::string phase_;
};

// --- plan model ---------------------------------------------------------------

struct GroundedRef {
  std::string binding;    // rep() name the expression uses
  std::string object_id;  // scene object, or "$slot" resolved by the program
  std::string part;
  RepKind kind = RepKind::point;
  Granularity granularity = Granularity::coarse;
  std::vector<std::string> object_ids;  // topo_order only
  std::string tool;  // selected extractor; empty until slot resolution

  bool is_slot() const { return !object_id.empty() && object_id[0] == '$'; }
  std::string slot_name() const { return object_id.substr(1); }
};

struct GroundedConstraint {
  std::string id;
  std::string statement;  // natural-language form, for reports
  ConstraintKind kind = ConstraintKind::subgoal;
  std::vector<GroundedRef> refs;
  std::string expr;  // cost expression source
  double tolerance = 1e-3;
  double weight = 1.0;
};

struct StageSpec {
  std::string name;
  std::string description;
  std::vector<std::string> hints;
  Gripper gripper_end = Gripper::hold;
  std::vector<GroundedConstraint> constraints;
};

struct ProgramStep {
  std::string op;         // query_state | branch_state | order_by | run_stages
  std::string binding;    // query_state, branch_state, order_by
  std::string object_id;  // query_state
  std::vector<std::string> objects;  // order_by
  std::vector<std::string> slots;    // order_by
  std::map<std::string, std::vector<std::string>> cases;  // branch_state
  std::vector<std::string> stages;   // run_stages
};

struct GroundedPlan {
  std::string task_name;
  std::string instruction;
  std::vector<StageSpec> stages;
  std::vector<ProgramStep> program;  // empty: run all stages in order
  double grounding_latency = 0.0;    // simulated seconds spent grounding
  int backend_calls = 0;
  int repair_retries_used = 0;

  const StageSpec* find_stage(const std::string& name) const {
    for (const auto& s : stages) {
      if (s.name == name) return &s;
    }
    return nullptr;
  }
};

// --- backend interface ----------------------------------------------------------

// One entry point per phase keeps wrappers and transports uniform.  `phase`
// is one of decompose / constraints / emit / merged; the request and response
// schemas are documented in docs/grounding_schemas.md.
class GroundingBackend {
 public:
  virtual ~GroundingBackend() = default;
  virtual Json call(const std::string& phase, const Json& request) = 0;
};

struct GroundingOptions {
  int repair_retries = 2;     // extra attempts after an invalid response
  double call_latency = 1.0;  // simulated seconds per backend call
};

// --- task scripts -----------------------------------------------------------------

// A task fixture: instruction, authored stage/constraint data the script
// backend serves, the stage program, and the success specification the
// benchmark checks.  See docs/file_formats.md.
struct TaskScript {
  std::string name;
  std::string instruction;
  std::string scene_path;  // relative to the task file's directory
  Json doc;                // full validated document
  Json success;            // predicate tree for the harness
};

inline TaskScript task_script_from_json(const Json& doc, const std::string& where) {
  TaskScript task;
  const int schema = static_cast<int>(require_number(doc, "schema", where));
  if (schema != 1) throw ParseError(where + ": unsupported schema version");
  task.name = require_string(doc, "name", where);
  task.instruction = require_string(doc, "instruction", where);
  task.scene_path = require_string(doc, "scene", where);
  const Json& stages = require_field(doc, "stages", where);
  if (!stages.is_array() || stages.empty()) {
    throw ParseError(where + ": 'stages' must be a non-empty array");
  }
  task.success = require_field(doc, "success", where);
  task.doc = doc;
  return task;
}

inline TaskScript task_script_load(const std::string& path) {
  return task_script_from_json(load_json_file(path), path);
}

// Serves grounding phases from an authored task script.  This is the
// deterministic stand-in for a language-model planner: the data is authored
// once, but it flows through exactly the same phase requests, validation,
// and compilation as any other backend.
class TaskScriptBackend : public GroundingBackend {
 public:
  explicit TaskScriptBackend(const TaskScript& task) : doc_(task.doc) {}

  Json call(const std::string& phase, const Json& request) override {
    if (phase == "decompose") return decompose();
    if (phase == "constraints") {
      return constraints(require_string(request, "stage", "constraints request"));
    }
    if (phase == "emit") {
      return emit(require_string(request, "stage", "emit request"),
                  require_string(request, "constraint", "emit request"));
    }
    if (phase == "merged") return merged();
    throw GroundingError(phase, "task script backend does not serve this phase");
  }

 private:
  Json decompose() const {
    Json out;
    Json stages = Json::array();
    for (const auto& js : doc_.at("stages")) {
      Json s;
      s["name"] = js.at("name");
      s["description"] = js.value("description", "");
      s["hints"] = js.value("hints", Json::array());
      s["gripper_end"] = js.value("gripper_end", "none");
      stages.push_back(s);
    }
    out["stages"] = stages;
    if (doc_.contains("program")) out["program"] = doc_.at("program");
    return out;
  }

  const Json& stage_doc(const std::string& name) const {
    for (const auto& js : doc_.at("stages")) {
      if (js.at("name") == name) return js;
    }
    throw GroundingError("constraints", "task script has no stage '" + name + "'");
  }

  Json constraints(const std::string& stage) const {
    const Json& js = stage_doc(stage);
    Json out;
    Json list = Json::array();
    for (const auto& jc : js.value("constraints", Json::array())) {
      Json c;
      c["id"] = jc.at("id");
      c["statement"] = jc.value("statement", "");
      c["kind"] = jc.value("kind", "subgoal");
      c["objects"] = jc.value("objects", Json::array());
      list.push_back(c);
    }
    out["constraints"] = list;
    return out;
  }

  Json emit(const std::string& stage, const std::string& constraint) const {
    const Json& js = stage_doc(stage);
    for (const auto& jc : js.value("constraints", Json::array())) {
      if (jc.at("id") == constraint) {
        Json out;
        out["expr"] = jc.at("expr");
        if (jc.contains("tolerance")) out["tolerance"] = jc.at("tolerance");
        if (jc.contains("weight")) out["weight"] = jc.at("weight");
        return out;
      }
    }
    throw GroundingError("emit", "task script has no constraint '" + constraint +
                                     "' in stage '" + stage + "'");
  }

  Json merged() const {
    Json out;
    out["stages"] = doc_.at("stages");
    if (doc_.contains("program")) out["program"] = doc_.at("program");
    return out;
  }

  Json doc_;
};

// Corrupts a fraction of responses from an inner backend; models an
// unreliable producer.  Phase-chained grounding recovers via validation and
// retry, the single-shot path cannot, which is the robustness gap the
// benchmark measures.
class FaultInjectingBackend : public GroundingBackend {
 public:
  FaultInjectingBackend(GroundingBackend& inner, double fault_probability, Rng rng)
      : inner_(inner), p_(fault_probability), rng_(rng) {
    if (!(p_ >= 0.0 && p_ <= 1.0)) {
      throw Error("fault probability must lie in [0, 1]");
    }
  }

  Json call(const std::string& phase, const Json& request) override {
    Json out = inner_.call(phase, request);
    if (!rng_.bernoulli(p_)) return out;
    switch (rng_.uniform_u64(3)) {
      case 0: {  // drop one top-level field
        if (out.is_object() && !out.empty()) {
          auto it = out.begin();
          const auto skip = rng_.uniform_u64(out.size());
          for (std::uint64_t i = 0; i < skip; ++i) ++it;
          out.erase(it.key());
        }
        return out;
      }
      case 1: {  // garble the first string leaf (breaks expressions, names)
        garble_first_string(out);
        return out;
      }
      default:  // wrong shape entirely
        return Json{{"text", out.dump()}};
    }
  }

 private:
  static bool garble_first_string(Json& node) {
    if (node.is_string()) {
      node = "?? " + node.get<std::string>() + " ((";
      return true;
    }
    if (node.is_object() || node.is_array()) {
      for (auto& child : node) {
        if (garble_first_string(child)) return true;
      }
    }
    return false;
  }

  GroundingBackend& inner_;
  double p_;
  Rng rng_;
};

// --- grounding ----------------------------------------------------------------------

namespace cog_detail {

inline Json scene_inventory(const Scene& scene) {
  Json objects = Json::array();
  for (const auto& o : scene.objects) {
    Json jo;
    jo["id"] = o.id;
    jo["class"] = o.class_name;
    jo["labels"] = o.labels;
    if (!o.parts.empty()) {
      Json parts = Json::array();
      for (const auto& p : o.parts) parts.push_back(p.id);
      jo["parts"] = parts;
    }
    objects.push_back(jo);
  }
  return objects;
}

// Runs one phase with validation and repair retries.  `build` must validate
// the response and throw on any problem; its result is returned.
template <typename BuildFn>
auto call_validated(GroundingBackend& backend, const std::string& phase,
                    Json request, const GroundingOptions& opt,
                    GroundedPlan& plan, BuildFn&& build) {
  std::string last_error;
  for (int attempt = 0; attempt <= opt.repair_retries; ++attempt) {
    if (attempt > 0) {
      request["repair"] = {{"attempt", attempt}, {"error", last_error}};
      ++plan.repair_retries_used;
    }
    Json response;
    try {
      response = backend.call(phase, request);
    } catch (const GroundingError&) {
      throw;  // the backend itself cannot serve this; retrying won't help
    }
    ++plan.backend_calls;
    plan.grounding_latency += opt.call_latency;
    try {
      return build(response);
    } catch (const Error& e) {
      last_error = e.what();
    }
  }
  throw GroundingError(phase, last_error);
}

// Names, ids, bindings, and slots are identifiers: [A-Za-z0-9_.-]+ (a leading
// '$' marks slot references).  Enforcing the format at validation time turns
// garbled-name corruption into a caught, retryable error instead of a
// poisoned later phase.
inline void check_identifier(const std::string& s, const std::string& what,
                             const std::string& where) {
  bool ok = !s.empty();
  for (std::size_t i = 0; ok && i < s.size(); ++i) {
    const char c = s[i];
    ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
         (c >= '0' && c <= '9') || c == '_' || c == '.' || c == '-' ||
         (c == '$' && i == 0);
  }
  if (!ok) {
    throw ParseError(where + ": " + what + " '" + s +
                     "' is not a well-formed identifier");
  }
}

inline GroundedRef parse_ref(const Json& jo, const std::string& where) {
  GroundedRef ref;
  ref.binding = require_string(jo, "binding", where);
  check_identifier(ref.binding, "binding name", where);
  ref.kind = rep_kind_from_name(require_string(jo, "kind", where));
  if (ref.kind == RepKind::topo_order) {
    const Json& ids = require_field(jo, "objects", where);
    if (!ids.is_array() || ids.size() < 2) {
      throw ParseError(where + ": topo_order binding needs >= 2 objects");
    }
    for (const auto& e : ids) ref.object_ids.push_back(e.get<std::string>());
  } else {
    ref.object_id = require_string(jo, "object", where);
  }
  ref.part = jo.value("part", "");
  ref.granularity = granularity_from_name(jo.value("granularity", "coarse"));
  return ref;
}

inline void check_ref_objects(const GroundedRef& ref, const Scene& scene,
                              const std::set<std::string>& slots,
                              const std::string& where) {
  auto check_one = [&](const std::string& id) {
    if (!id.empty() && id[0] == '$') {
      if (!slots.count(id.substr(1))) {
        throw ParseError(where + ": unknown slot '" + id + "'");
      }
      return;
    }
    const SceneObject* obj = scene.find(id);
    if (!obj) throw ParseError(where + ": unknown object '" + id + "'");
    if (!ref.part.empty() && !obj->find_part(ref.part)) {
      throw ParseError(where + ": object '" + id + "' has no part '" + ref.part + "'");
    }
  };
  if (ref.kind == RepKind::topo_order) {
    for (const auto& id : ref.object_ids) check_one(id);
  } else {
    check_one(ref.object_id);
  }
}

inline std::vector<ProgramStep> parse_program(const Json& jp, const Scene& scene,
                                              const std::string& where) {
  std::vector<ProgramStep> program;
  if (!jp.is_array()) throw ParseError(where + ": program must be an array");
  std::set<std::string> bindings;
  for (const auto& js : jp) {
    ProgramStep step;
    step.op = require_string(js, "op", where);
    if (step.op == "query_state") {
      step.binding = require_string(js, "binding", where);
      check_identifier(step.binding, "program binding", where);
      step.object_id = require_string(js, "object", where);
      const SceneObject* obj = scene.find(step.object_id);
      if (!obj) throw ParseError(where + ": unknown object '" + step.object_id + "'");
      if (!obj->state_machine) {
        throw ParseError(where + ": object '" + step.object_id +
                         "' has no state machine to query");
      }
      bindings.insert(step.binding);
    } else if (step.op == "branch_state") {
      step.binding = require_string(js, "binding", where);
      if (!bindings.count(step.binding)) {
        throw ParseError(where + ": branch_state before query_state for '" +
                         step.binding + "'");
      }
      const Json& cases = require_field(js, "cases", where);
      for (auto it = cases.begin(); it != cases.end(); ++it) {
        std::vector<std::string> names;
        for (const auto& n : it.value()) names.push_back(n.get<std::string>());
        step.cases[it.key()] = names;
      }
    } else if (step.op == "order_by") {
      step.binding = require_string(js, "binding", where);
      check_identifier(step.binding, "program binding", where);
      const Json& objs = require_field(js, "objects", where);
      const Json& slots = require_field(js, "slots", where);
      for (const auto& e : objs) {
        const std::string id = e.get<std::string>();
        if (!scene.find(id)) throw ParseError(where + ": unknown object '" + id + "'");
        step.objects.push_back(id);
      }
      for (const auto& e : slots) {
        step.slots.push_back(e.get<std::string>());
        check_identifier(step.slots.back(), "slot name", where);
      }
      if (step.slots.size() != step.objects.size()) {
        throw ParseError(where + ": order_by needs one slot per object");
      }
    } else if (step.op == "run_stages") {
      const Json& names = require_field(js, "stages", where);
      for (const auto& n : names) step.stages.push_back(n.get<std::string>());
    } else {
      throw ParseError(where + ": unknown program op '" + step.op + "'");
    }
    program.push_back(std::move(step));
  }
  return program;
}

inline std::set<std::string> program_slots(const std::vector<ProgramStep>& program) {
  std::set<std::string> slots;
  for (const auto& step : program) {
    for (const auto& s : step.slots) slots.insert(s);
  }
  return slots;
}

inline void check_program_stages(const std::vector<StageSpec>& stages,
                                 const std::vector<ProgramStep>& program) {
  auto find_stage = [&](const std::string& n) {
    for (const auto& s : stages) {
      if (s.name == n) return true;
    }
    return false;
  };
  for (const auto& step : program) {
    auto check = [&](const std::vector<std::string>& names) {
      for (const auto& n : names) {
        if (!find_stage(n)) {
          throw ParseError("program references unknown stage '" + n + "'");
        }
      }
    };
    check(step.stages);
    for (const auto& [state, names] : step.cases) check(names);
  }
}

inline TypeEnv stage_env(const StageSpec& stage) {
  TypeEnv env;
  for (const auto& c : stage.constraints) {
    for (const auto& ref : c.refs) env[ref.binding] = ref.kind;
  }
  return env;
}

}  // namespace cog_detail

// Phase 3: pick an extractor for every binding whose object is already
// concrete.  Slot-parameterized bindings are selected at resolution time.
inline void select_tools_for_plan(GroundedPlan& plan, const Scene& scene,
                                  const Registry& registry,
                                  const PSuccFn& p_succ_fn = default_p_succ) {
  for (auto& stage : plan.stages) {
    for (auto& constraint : stage.constraints) {
      for (auto& ref : constraint.refs) {
        if (ref.is_slot()) continue;
        Requirement req;
        req.kind = ref.kind;
        req.object_id = ref.object_id;
        req.part = ref.part;
        req.granularity = ref.granularity;
        req.object_ids = ref.object_ids;
        req.object_class = ref.kind == RepKind::topo_order
                               ? "*"
                               : scene.require(ref.object_id).class_name;
        const auto sel = select_tool(registry, req, p_succ_fn);
        if (!sel) {
          throw GroundingError(
              "select", "no extractor can produce '" +
                            std::string(rep_kind_name(ref.kind)) +
                            "' for binding '" + ref.binding + "' (object '" +
                            ref.object_id + "')");
        }
        ref.tool = sel->tool;
      }
    }
  }
}

// Chain-of-phases grounding: decompose, derive constraints, select tools,
// emit and compile expressions.  Throws GroundingError when a phase cannot
// produce a valid result within the retry budget.
inline GroundedPlan ground_with_cog(const TaskScript& task, const Scene& scene,
                                    const Registry& registry,
                                    GroundingBackend& backend,
                                    const GroundingOptions& opt = {},
                                    const PSuccFn& p_succ_fn = default_p_succ) {
  GroundedPlan plan;
  plan.task_name = task.name;
  plan.instruction = task.instruction;

  Json base_request;
  base_request["instruction"] = task.instruction;
  base_request["objects"] = cog_detail::scene_inventory(scene);

  // Phase 1: decomposition.
  struct Skeleton {
    std::vector<StageSpec> stages;
    std::vector<ProgramStep> program;
  };
  Skeleton skel = cog_detail::call_validated(
      backend, "decompose", base_request, opt, plan, [&](const Json& r) {
        Skeleton out;
        const Json& stages = require_field(r, "stages", "decompose response");
        if (!stages.is_array() || stages.empty()) {
          throw ParseError("decompose response: 'stages' must be non-empty");
        }
        std::set<std::string> names;
        for (const auto& js : stages) {
          StageSpec s;
          s.name = require_string(js, "name", "decompose response");
          cog_detail::check_identifier(s.name, "stage name", "decompose response");
          if (!names.insert(s.name).second) {
            throw ParseError("decompose response: duplicate stage '" + s.name + "'");
          }
          s.description = js.value("description", "");
          for (const auto& h : js.value("hints", Json::array())) {
            s.hints.push_back(h.get<std::string>());
          }
          const std::string g = js.value("gripper_end", "none");
          s.gripper_end = g == "none" ? Gripper::hold : gripper_from_name(g);
          out.stages.push_back(std::move(s));
        }
        if (r.contains("program")) {
          out.program =
              cog_detail::parse_program(r.at("program"), scene, "decompose response");
        }
        cog_detail::check_program_stages(out.stages, out.program);
        return out;
      });
  plan.stages = std::move(skel.stages);
  plan.program = std::move(skel.program);
  const std::set<std::string> slots = cog_detail::program_slots(plan.program);

  // Phase 2: constraint derivation per stage.
  for (auto& stage : plan.stages) {
    Json request = base_request;
    request["stage"] = stage.name;
    request["description"] = stage.description;
    request["hints"] = stage.hints;
    stage.constraints = cog_detail::call_validated(
        backend, "constraints", request, opt, plan, [&](const Json& r) {
          std::vector<GroundedConstraint> out;
          const Json& list = require_field(r, "constraints", "constraints response");
          if (!list.is_array()) {
            throw ParseError("constraints response: 'constraints' must be an array");
          }
          std::set<std::string> ids;
          std::set<std::string> bindings;
          for (const auto& jc : list) {
            GroundedConstraint c;
            c.id = require_string(jc, "id", "constraints response");
            cog_detail::check_identifier(c.id, "constraint id",
                                         "constraints response");
            if (!ids.insert(c.id).second) {
              throw ParseError("constraints response: duplicate constraint '" +
                               c.id + "'");
            }
            c.statement = jc.value("statement", "");
            c.kind = constraint_kind_from_name(jc.value("kind", "subgoal"));
            for (const auto& jo : jc.value("objects", Json::array())) {
              GroundedRef ref = cog_detail::parse_ref(jo, "constraints response");
              if (!bindings.insert(ref.binding).second) {
                throw ParseError("constraints response: binding '" + ref.binding +
                                 "' declared twice in stage '" + stage.name + "'");
              }
              cog_detail::check_ref_objects(ref, scene, slots,
                                            "constraints response");
              c.refs.push_back(std::move(ref));
            }
            out.push_back(std::move(c));
          }
          return out;
        });
  }

  // Phase 3: extractor selection.
  select_tools_for_plan(plan, scene, registry, p_succ_fn);

  // Phase 4: expression emission, compiled against the declared bindings.
  for (auto& stage : plan.stages) {
    const TypeEnv env = cog_detail::stage_env(stage);
    for (auto& constraint : stage.constraints) {
      Json request = base_request;
      request["stage"] = stage.name;
      request["constraint"] = constraint.id;
      request["statement"] = constraint.statement;
      Json bindings = Json::array();
      for (const auto& ref : constraint.refs) {
        bindings.push_back(
            {{"name", ref.binding}, {"kind", rep_kind_name(ref.kind)}});
      }
      request["bindings"] = bindings;
      cog_detail::call_validated(
          backend, "emit", request, opt, plan, [&](const Json& r) {
            const std::string expr = require_string(r, "expr", "emit response");
            const double tolerance = r.value("tolerance", 1e-3);
            const double weight = r.value("weight", 1.0);
            compile_constraint(constraint.id, constraint.kind, expr, env,
                               tolerance, weight);
            constraint.expr = expr;
            constraint.tolerance = tolerance;
            constraint.weight = weight;
            return true;
          });
    }
  }
  return plan;
}

// Degraded comparison mode: request the entire plan in one merged call with
// no per-phase validation retries.  A single malformed response fails the
// whole grounding.
inline GroundedPlan ground_single_shot(const TaskScript& task, const Scene& scene,
                                       const Registry& registry,
                                       GroundingBackend& backend,
                                       const GroundingOptions& opt = {},
                                       const PSuccFn& p_succ_fn = default_p_succ) {
  GroundedPlan plan;
  plan.task_name = task.name;
  plan.instruction = task.instruction;

  Json request;
  request["instruction"] = task.instruction;
  request["objects"] = cog_detail::scene_inventory(scene);
  Json response = backend.call("merged", request);
  ++plan.backend_calls;
  plan.grounding_latency += opt.call_latency;

  try {
    const Json& stages = require_field(response, "stages", "merged response");
    if (!stages.is_array() || stages.empty()) {
      throw ParseError("merged response: 'stages' must be non-empty");
    }
    if (response.contains("program")) {
      plan.program = cog_detail::parse_program(response.at("program"), scene,
                                               "merged response");
    }
    const std::set<std::string> slots = cog_detail::program_slots(plan.program);
    std::set<std::string> names;
    for (const auto& js : stages) {
      StageSpec s;
      s.name = require_string(js, "name", "merged response");
      cog_detail::check_identifier(s.name, "stage name", "merged response");
      if (!names.insert(s.name).second) {
        throw ParseError("merged response: duplicate stage '" + s.name + "'");
      }
      s.description = js.value("description", "");
      for (const auto& h : js.value("hints", Json::array())) {
        s.hints.push_back(h.get<std::string>());
      }
      const std::string g = js.value("gripper_end", "none");
      s.gripper_end = g == "none" ? Gripper::hold : gripper_from_name(g);
      std::set<std::string> bindings;
      for (const auto& jc : js.value("constraints", Json::array())) {
        GroundedConstraint c;
        c.id = require_string(jc, "id", "merged response");
        cog_detail::check_identifier(c.id, "constraint id", "merged response");
        c.statement = jc.value("statement", "");
        c.kind = constraint_kind_from_name(jc.value("kind", "subgoal"));
        for (const auto& jo : jc.value("objects", Json::array())) {
          GroundedRef ref = cog_detail::parse_ref(jo, "merged response");
          if (!bindings.insert(ref.binding).second) {
            throw ParseError("merged response: binding '" + ref.binding +
                             "' declared twice in stage '" + s.name + "'");
          }
          cog_detail::check_ref_objects(ref, scene, slots, "merged response");
          c.refs.push_back(std::move(ref));
        }
        c.expr = require_string(jc, "expr", "merged response");
        c.tolerance = jc.value("tolerance", 1e-3);
        c.weight = jc.value("weight", 1.0);
        s.constraints.push_back(std::move(c));
      }
      plan.stages.push_back(std::move(s));
    }
    cog_detail::check_program_stages(plan.stages, plan.program);
    for (const auto& s : plan.stages) {
      const TypeEnv env = cog_detail::stage_env(s);
      for (const auto& c : s.constraints) {
        compile_constraint(c.id, c.kind, c.expr, env, c.tolerance, c.weight);
      }
    }
    select_tools_for_plan(plan, scene, registry, p_succ_fn);
  } catch (const GroundingError&) {
    throw;
  } catch (const Error& e) {
    throw GroundingError("merged", e.what());
  }
  return plan;
}

// Static diagnostics for a plan: unknown objects, kinds the registry cannot
// produce, expressions that fail to compile.  Never throws; the benchmark
// and the CLI surface these as data.
inline std::vector<Diagnostic> validate_bindings(const GroundedPlan& plan,
                                                 const Scene& scene,
                                                 const Registry& registry) {
  std::vector<Diagnostic> out;
  const std::set<std::string> slots = cog_detail::program_slots(plan.program);
  for (const auto& stage : plan.stages) {
    for (const auto& constraint : stage.constraints) {
      for (const auto& ref : constraint.refs) {
        try {
          cog_detail::check_ref_objects(ref, scene, slots, "stage '" + stage.name + "'");
        } catch (const Error& e) {
          out.push_back({Diagnostic::Severity::error, constraint.id, e.what()});
          continue;
        }
        Requirement req;
        req.kind = ref.kind;
        req.granularity = ref.granularity;
        req.object_class =
            ref.is_slot() || ref.kind == RepKind::topo_order
                ? "*"
                : scene.require(ref.object_id).class_name;
        bool servable = false;
        for (const auto& tool : registry.tools) {
          if (output_serves(tool.output, req.kind) &&
              (req.object_class == "*" ? true
                                       : tool.p_for_class(req.object_class) > 0.0)) {
            servable = true;
            break;
          }
        }
        if (!servable) {
          out.push_back({Diagnostic::Severity::error, constraint.id,
                         "no registered extractor produces '" +
                             std::string(rep_kind_name(ref.kind)) +
                             "' usable for binding '" + ref.binding + "'"});
        }
        if (ref.granularity == Granularity::fine &&
            !registry.has_output(RepKind::region)) {
          out.push_back({Diagnostic::Severity::warning, constraint.id,
                         "binding '" + ref.binding +
                             "' asks for fine granularity but no region tool "
                             "exists; it will degrade to coarse"});
        }
      }
      const TypeEnv env = cog_detail::stage_env(stage);
      try {
        compile_constraint(constraint.id, constraint.kind, constraint.expr, env,
                           constraint.tolerance, constraint.weight);
      } catch (const Error& e) {
        out.push_back({Diagnostic::Severity::error, constraint.id, e.what()});
      }
    }
  }
  return out;
}

// --- plan serialization ---------------------------------------------------------

inline Json plan_to_json(const GroundedPlan& plan) {
  Json doc;
  doc["schema"] = 1;
  doc["task"] = plan.task_name;
  doc["instruction"] = plan.instruction;
  doc["grounding_latency"] = plan.grounding_latency;
  doc["backend_calls"] = plan.backend_calls;
  doc["repair_retries_used"] = plan.repair_retries_used;
  Json stages = Json::array();
  for (const auto& s : plan.stages) {
    Json js;
    js["name"] = s.name;
    js["description"] = s.description;
    js["hints"] = s.hints;
    js["gripper_end"] =
        s.gripper_end == Gripper::hold ? "none" : gripper_name(s.gripper_end);
    Json constraints = Json::array();
    for (const auto& c : s.constraints) {
      Json jc;
      jc["id"] = c.id;
      jc["statement"] = c.statement;
      jc["kind"] = constraint_kind_name(c.kind);
      jc["expr"] = c.expr;
      jc["tolerance"] = c.tolerance;
      jc["weight"] = c.weight;
      Json refs = Json::array();
      for (const auto& r : c.refs) {
        Json jr;
        jr["binding"] = r.binding;
        jr["kind"] = rep_kind_name(r.kind);
        if (r.kind == RepKind::topo_order) {
          jr["objects"] = r.object_ids;
        } else {
          jr["object"] = r.object_id;
        }
        if (!r.part.empty()) jr["part"] = r.part;
        jr["granularity"] = granularity_name(r.granularity);
        if (!r.tool.empty()) jr["tool"] = r.tool;
        refs.push_back(jr);
      }
      jc["objects"] = refs;
      constraints.push_back(jc);
    }
    js["constraints"] = constraints;
    stages.push_back(js);
  }
  doc["stages"] = stages;
  if (!plan.program.empty()) {
    Json program = Json::array();
    for (const auto& step : plan.program) {
      Json jp;
      jp["op"] = step.op;
      if (!step.binding.empty()) jp["binding"] = step.binding;
      if (!step.object_id.empty()) jp["object"] = step.object_id;
      if (!step.objects.empty()) jp["objects"] = step.objects;
      if (!step.slots.empty()) jp["slots"] = step.slots;
      if (!step.cases.empty()) {
        Json cases;
        for (const auto& [state, names] : step.cases) cases[state] = names;
        jp["cases"] = cases;
      }
      if (!step.stages.empty()) jp["stages"] = step.stages;
      program.push_back(jp);
    }
    doc["program"] = program;
  }
  return doc;
}

}  // namespace trex
