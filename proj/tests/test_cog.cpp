#include <catch2/catch_amalgamated.hpp>

#include <set>
#include <string>
#include <vector>

#include "trex/cog.hpp"

using namespace trex;

namespace {

std::string fix(const std::string& rel) {
  return std::string(TREX_SOURCE_DIR) + "/fixtures/" + rel;
}

struct Loaded {
  TaskScript task;
  Scene scene;
  Registry registry;
};

Loaded load(const std::string& task_file, const std::string& scene_file) {
  return {task_script_load(fix("tasks/" + task_file)),
          scene_load(fix("scenes/" + scene_file)),
          registry_load(fix("registry.json"))};
}

// Structural invariants that survive fault injection: free-text fields
// (description, statement) and optional response fields (tolerance, weight)
// carry no validation, so a repaired plan may legitimately differ there.
void check_pick_place_shape(const GroundedPlan& plan) {
  REQUIRE(plan.stages.size() == 2);
  CHECK(plan.stages[0].name == "grasp_red");
  CHECK(plan.stages[1].name == "place_red");
  CHECK(plan.stages[0].gripper_end == Gripper::close);
  CHECK(plan.stages[1].gripper_end == Gripper::open);
  CHECK(plan.program.empty());

  REQUIRE(plan.stages[0].constraints.size() == 1);
  const GroundedConstraint& reach = plan.stages[0].constraints[0];
  CHECK(reach.id == "reach_red");
  REQUIRE(reach.refs.size() == 1);
  CHECK(reach.refs[0].binding == "red");
  CHECK(reach.refs[0].object_id == "red_block");
  CHECK(reach.refs[0].kind == RepKind::point);
  CHECK(reach.refs[0].tool == "center_point");

  REQUIRE(plan.stages[1].constraints.size() == 1);
  const GroundedConstraint& place = plan.stages[1].constraints[0];
  CHECK(place.id == "red_on_green");
  REQUIRE(place.refs.size() == 2);
  for (const auto& ref : place.refs) {
    CHECK(ref.kind == RepKind::point);
    CHECK(ref.tool == "center_point");
  }

  // Every emitted expression compiles against its stage's declared bindings.
  for (const auto& stage : plan.stages) {
    const TypeEnv env = cog_detail::stage_env(stage);
    for (const auto& c : stage.constraints) {
      CHECK_NOTHROW(compile_constraint(c.id, c.kind, c.expr, env, c.tolerance,
                                       c.weight));
    }
  }
}

}  // namespace

TEST_CASE("phase-chained grounding compiles an authored task end to end") {
  Loaded lx = load("pick_place.json", "pick_place.json");
  TaskScriptBackend backend(lx.task);

  const GroundedPlan plan =
      ground_with_cog(lx.task, lx.scene, lx.registry, backend);

  CHECK(plan.task_name == "pick_place");
  CHECK(plan.instruction == lx.task.instruction);
  check_pick_place_shape(plan);

  // 1 decompose + 2 constraints + 2 emit, one simulated second each.
  CHECK(plan.backend_calls == 5);
  CHECK(plan.repair_retries_used == 0);
  CHECK(plan.grounding_latency == Catch::Approx(5.0));

  // The clean path preserves authored fields exactly.
  const Json& authored = lx.task.doc["stages"][0]["constraints"][0];
  const GroundedConstraint& reach = plan.stages[0].constraints[0];
  CHECK(reach.expr == authored["expr"].get<std::string>());
  CHECK(reach.tolerance == Catch::Approx(0.008));
  CHECK(reach.weight == Catch::Approx(1.0));
  CHECK(plan.stages[1].constraints[0].tolerance == Catch::Approx(0.008));

  CHECK(plan.find_stage("place_red") != nullptr);
  CHECK(plan.find_stage("shake_vigorously") == nullptr);

  CHECK(validate_bindings(plan, lx.scene, lx.registry).empty());
}

TEST_CASE("single-shot grounding of a clean backend matches the phase chain") {
  Loaded lx = load("pick_place.json", "pick_place.json");
  TaskScriptBackend backend(lx.task);

  const GroundedPlan chained =
      ground_with_cog(lx.task, lx.scene, lx.registry, backend);
  const GroundedPlan merged =
      ground_single_shot(lx.task, lx.scene, lx.registry, backend);

  CHECK(merged.backend_calls == 1);
  CHECK(merged.repair_retries_used == 0);
  CHECK(merged.grounding_latency == Catch::Approx(1.0));

  // Identical stage content; only the call accounting differs.
  CHECK(plan_to_json(merged)["stages"] == plan_to_json(chained)["stages"]);
  CHECK(merged.task_name == chained.task_name);
  CHECK(merged.instruction == chained.instruction);
}

TEST_CASE("faulty responses are repaired by per-phase retries") {
  Loaded lx = load("pick_place.json", "pick_place.json");
  TaskScriptBackend inner(lx.task);
  GroundingOptions opt;
  opt.repair_retries = 3;

  int chained_ok = 0;
  int repaired_ok = 0;
  int single_ok = 0;
  int single_failed = 0;
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    {
      FaultInjectingBackend faulty(inner, 0.35, Rng(seed));
      try {
        const GroundedPlan plan =
            ground_with_cog(lx.task, lx.scene, lx.registry, faulty, opt);
        ++chained_ok;
        if (plan.repair_retries_used > 0) {
          ++repaired_ok;
          CHECK(plan.backend_calls > 5);
        }
        check_pick_place_shape(plan);
      } catch (const GroundingError&) {
      }
    }
    {
      FaultInjectingBackend faulty(inner, 0.35, Rng(seed));
      try {
        ground_single_shot(lx.task, lx.scene, lx.registry, faulty, opt);
        ++single_ok;
      } catch (const GroundingError& e) {
        ++single_failed;
        CHECK(e.phase() == "merged");
      }
    }
  }

  // Retries recover plans the one-shot path loses; both outcomes occur.
  CHECK(repaired_ok >= 1);
  CHECK(single_failed >= 1);
  CHECK(single_ok >= 1);
  CHECK(chained_ok >= single_ok);
}

TEST_CASE("a fully faulty backend exhausts retries with the phase named") {
  Loaded lx = load("pick_place.json", "pick_place.json");
  TaskScriptBackend inner(lx.task);

  // Garbling can land on free-text fields that validate fine, so the chain
  // may limp past decompose; it must still die in one of its own phases.
  {
    FaultInjectingBackend faulty(inner, 1.0, Rng(7));
    try {
      ground_with_cog(lx.task, lx.scene, lx.registry, faulty);
      FAIL("expected GroundingError");
    } catch (const GroundingError& e) {
      const std::set<std::string> phases{"decompose", "constraints", "emit"};
      CHECK(phases.count(e.phase()) == 1);
    }
  }
  {
    FaultInjectingBackend faulty(inner, 1.0, Rng(7));
    try {
      ground_single_shot(lx.task, lx.scene, lx.registry, faulty);
      FAIL("expected GroundingError");
    } catch (const GroundingError& e) {
      CHECK(e.phase() == "merged");
    }
  }

  CHECK_THROWS_AS(FaultInjectingBackend(inner, 1.5, Rng(0)), Error);
  CHECK_THROWS_AS(FaultInjectingBackend(inner, -0.1, Rng(0)), Error);
}

namespace {

// A backend that cannot serve at all: its own GroundingError must surface
// immediately instead of burning the retry budget.
struct RefusingBackend : GroundingBackend {
  int calls = 0;
  Json call(const std::string& phase, const Json&) override {
    ++calls;
    throw GroundingError(phase, "backend offline");
  }
};

// Fails the first decompose with a malformed shape, then defers to the
// scripted data; records the repair field of every retried request.
struct FlakyDecomposeBackend : GroundingBackend {
  explicit FlakyDecomposeBackend(const TaskScript& task) : inner(task) {}

  Json call(const std::string& phase, const Json& request) override {
    if (phase == "decompose") {
      ++decompose_calls;
      if (request.contains("repair")) repairs.push_back(request.at("repair"));
      if (decompose_calls == 1) return Json{{"text", "no stages here"}};
    }
    return inner.call(phase, request);
  }

  TaskScriptBackend inner;
  int decompose_calls = 0;
  std::vector<Json> repairs;
};

}  // namespace

TEST_CASE("backend-origin grounding errors propagate without retry") {
  Loaded lx = load("pick_place.json", "pick_place.json");
  RefusingBackend backend;

  try {
    ground_with_cog(lx.task, lx.scene, lx.registry, backend);
    FAIL("expected GroundingError");
  } catch (const GroundingError& e) {
    CHECK(e.phase() == "decompose");
  }
  CHECK(backend.calls == 1);
}

TEST_CASE("repair requests carry the attempt number and prior error") {
  Loaded lx = load("pick_place.json", "pick_place.json");
  FlakyDecomposeBackend backend(lx.task);

  const GroundedPlan plan =
      ground_with_cog(lx.task, lx.scene, lx.registry, backend);

  CHECK(backend.decompose_calls == 2);
  REQUIRE(backend.repairs.size() == 1);
  CHECK(backend.repairs[0].at("attempt") == 1);
  const auto err = backend.repairs[0].at("error").get<std::string>();
  CHECK(err.find("stages") != std::string::npos);

  // The invalid served response still counts as a call and a retry.
  CHECK(plan.backend_calls == 6);
  CHECK(plan.repair_retries_used == 1);
  CHECK(plan.grounding_latency == Catch::Approx(6.0));
  check_pick_place_shape(plan);
}

TEST_CASE("identifier validation accepts names and rejects junk") {
  auto ok = [](const std::string& s) {
    return cog_detail::check_identifier(s, "name", "test");
  };
  CHECK_NOTHROW(ok("red_block"));
  CHECK_NOTHROW(ok("a.b-c_9"));
  CHECK_NOTHROW(ok("$s0"));
  CHECK_NOTHROW(ok("UPPER"));

  CHECK_THROWS_AS(ok(""), ParseError);
  CHECK_THROWS_AS(ok("bad name"), ParseError);
  CHECK_THROWS_AS(ok("x$y"), ParseError);
  CHECK_THROWS_AS(ok("?? grasp (("), ParseError);
  CHECK_THROWS_AS(ok("a/b"), ParseError);
}

TEST_CASE("program parsing validates ops, bindings, and slots") {
  const Scene scene = scene_load(fix("scenes/drawer.json"));

  SECTION("a well-formed program round-trips") {
    const Json jp = Json::array(
        {{{"op", "query_state"}, {"binding", "st"}, {"object", "drawer"}},
         {{"op", "branch_state"},
          {"binding", "st"},
          {"cases", {{"closed", {"pull"}}, {"open", Json::array()}}}},
         {{"op", "run_stages"}, {"stages", {"pull"}}}});
    const auto program = cog_detail::parse_program(jp, scene, "test");
    REQUIRE(program.size() == 3);
    CHECK(program[0].op == "query_state");
    CHECK(program[0].object_id == "drawer");
    CHECK(program[1].cases.at("closed") == std::vector<std::string>{"pull"});
    CHECK(program[1].cases.at("open").empty());
    CHECK(program[2].stages == std::vector<std::string>{"pull"});
  }

  SECTION("query_state needs an object with a state machine") {
    const Json jp = Json::array(
        {{{"op", "query_state"}, {"binding", "st"}, {"object", "cabinet"}}});
    CHECK_THROWS_AS(cog_detail::parse_program(jp, scene, "test"), ParseError);
  }

  SECTION("query_state rejects unknown objects") {
    const Json jp = Json::array(
        {{{"op", "query_state"}, {"binding", "st"}, {"object", "ghost"}}});
    CHECK_THROWS_AS(cog_detail::parse_program(jp, scene, "test"), ParseError);
  }

  SECTION("branch_state requires a prior query_state binding") {
    const Json jp = Json::array({{{"op", "branch_state"},
                                  {"binding", "st"},
                                  {"cases", {{"open", Json::array()}}}}});
    CHECK_THROWS_AS(cog_detail::parse_program(jp, scene, "test"), ParseError);
  }

  SECTION("order_by needs one slot per object") {
    const Json jp = Json::array({{{"op", "order_by"},
                                  {"binding", "ord"},
                                  {"objects", {"drawer", "cabinet"}},
                                  {"slots", {"s0"}}}});
    CHECK_THROWS_AS(cog_detail::parse_program(jp, scene, "test"), ParseError);
  }

  SECTION("order_by rejects unknown objects") {
    const Json jp = Json::array({{{"op", "order_by"},
                                  {"binding", "ord"},
                                  {"objects", {"drawer", "ghost"}},
                                  {"slots", {"s0", "s1"}}}});
    CHECK_THROWS_AS(cog_detail::parse_program(jp, scene, "test"), ParseError);
  }

  SECTION("unknown ops and non-array programs are rejected") {
    CHECK_THROWS_AS(
        cog_detail::parse_program(Json::array({{{"op", "loop"}}}), scene, "t"),
        ParseError);
    CHECK_THROWS_AS(cog_detail::parse_program(Json::object(), scene, "t"),
                    ParseError);
  }

  SECTION("program stage names must exist in the decomposition") {
    std::vector<StageSpec> stages(2);
    stages[0].name = "pull";
    stages[1].name = "release";
    ProgramStep run;
    run.op = "run_stages";
    run.stages = {"pull", "release"};
    CHECK_NOTHROW(cog_detail::check_program_stages(stages, {run}));

    run.stages = {"pull", "shove"};
    CHECK_THROWS_AS(cog_detail::check_program_stages(stages, {run}),
                    ParseError);

    ProgramStep branch;
    branch.op = "branch_state";
    branch.cases["open"] = {"vanish"};
    CHECK_THROWS_AS(cog_detail::check_program_stages(stages, {branch}),
                    ParseError);
  }
}

TEST_CASE("slot references survive grounding with tool selection deferred") {
  Loaded lx = load("stack_on_plate.json", "stack.json");
  TaskScriptBackend backend(lx.task);

  const GroundedPlan plan =
      ground_with_cog(lx.task, lx.scene, lx.registry, backend);

  REQUIRE(plan.program.size() == 2);
  CHECK(plan.program[0].op == "order_by");
  CHECK(plan.program[0].slots == std::vector<std::string>{"s0", "s1", "s2"});
  CHECK(plan.program[0].objects ==
        std::vector<std::string>{"block_a", "block_b", "block_c"});
  CHECK(plan.program[1].op == "run_stages");
  CHECK(plan.program[1].stages.size() == 6);

  const StageSpec* grasp = plan.find_stage("grasp_first");
  REQUIRE(grasp != nullptr);
  const GroundedRef& pick = grasp->constraints.at(0).refs.at(0);
  CHECK(pick.is_slot());
  CHECK(pick.slot_name() == "s0");
  CHECK(pick.tool.empty());

  const StageSpec* place = plan.find_stage("place_first");
  REQUIRE(place != nullptr);
  const auto& refs = place->constraints.at(0).refs;
  REQUIRE(refs.size() == 2);
  CHECK(refs[0].is_slot());
  CHECK(refs[0].tool.empty());
  CHECK_FALSE(refs[1].is_slot());
  CHECK(refs[1].object_id == "plate");
  CHECK(refs[1].tool == "center_point");

  CHECK(validate_bindings(plan, lx.scene, lx.registry).empty());

  // 1 decompose + 6 constraints + 6 emit.
  CHECK(plan.backend_calls == 13);
}

TEST_CASE("constraints against undeclared slots fail the constraints phase") {
  Loaded lx = load("stack_on_plate.json", "stack.json");
  Json doc = lx.task.doc;
  doc["stages"][0]["constraints"][0]["objects"][0]["object"] = "$zz";
  const TaskScript bad = task_script_from_json(doc, "mutated task");
  TaskScriptBackend backend(bad);
  GroundingOptions opt;
  opt.repair_retries = 1;

  try {
    ground_with_cog(bad, lx.scene, lx.registry, backend, opt);
    FAIL("expected GroundingError");
  } catch (const GroundingError& e) {
    CHECK(e.phase() == "constraints");
    CHECK(std::string(e.what()).find("$zz") != std::string::npos);
  }
}

TEST_CASE("plan serialization captures every grounded field") {
  Loaded lx = load("drawer_open.json", "drawer.json");
  TaskScriptBackend backend(lx.task);

  const GroundedPlan plan =
      ground_with_cog(lx.task, lx.scene, lx.registry, backend);
  const Json js = plan_to_json(plan);

  CHECK(js.at("schema") == 1);
  CHECK(js.at("task") == "drawer_open");
  CHECK(js.at("instruction") == lx.task.instruction);
  CHECK(js.at("backend_calls") == 6);
  CHECK(js.at("repair_retries_used") == 0);

  REQUIRE(js.at("program").size() == 2);
  CHECK(js["program"][0].at("op") == "query_state");
  CHECK(js["program"][0].at("binding") == "drawer_state");
  CHECK(js["program"][0].at("object") == "drawer");
  CHECK(js["program"][1].at("cases").at("closed").size() == 3);
  CHECK(js["program"][1].at("cases").at("open").empty());

  REQUIRE(js.at("stages").size() == 3);
  CHECK(js["stages"][0].at("gripper_end") == "close");
  CHECK(js["stages"][1].at("gripper_end") == "none");
  CHECK(js["stages"][2].at("gripper_end") == "open");
  CHECK(js["stages"][2].at("constraints").empty());

  const Json& pull = js["stages"][1]["constraints"][0];
  CHECK(pull.at("id") == "pull_out");
  CHECK(pull.at("tolerance") == Catch::Approx(0.01));
  REQUIRE(pull.at("objects").size() == 2);
  CHECK(pull["objects"][0].at("part") == "front_anchor");
  CHECK(pull["objects"][1].at("kind") == "vector");
  CHECK(pull["objects"][1].at("tool") == "vlm_task_vector");

  const Json& handle = js["stages"][0]["constraints"][0]["objects"][0];
  CHECK(handle.at("object") == "drawer");
  CHECK(handle.at("part") == "handle");
  CHECK(handle.at("tool") == "center_point");
}

TEST_CASE("grounding latency scales with the configured call cost") {
  Loaded lx = load("pick_place.json", "pick_place.json");
  TaskScriptBackend backend(lx.task);
  GroundingOptions opt;
  opt.call_latency = 0.25;

  const GroundedPlan chained =
      ground_with_cog(lx.task, lx.scene, lx.registry, backend, opt);
  CHECK(chained.grounding_latency == Catch::Approx(5 * 0.25));

  const GroundedPlan merged =
      ground_single_shot(lx.task, lx.scene, lx.registry, backend, opt);
  CHECK(merged.grounding_latency == Catch::Approx(0.25));
}

TEST_CASE("static plan diagnostics flag unservable bindings without throwing") {
  Loaded lx = load("pick_place.json", "pick_place.json");
  TaskScriptBackend backend(lx.task);
  GroundedPlan plan = ground_with_cog(lx.task, lx.scene, lx.registry, backend);

  CHECK(validate_bindings(plan, lx.scene, lx.registry).empty());

  SECTION("an unknown object becomes an error diagnostic") {
    plan.stages[0].constraints[0].refs[0].object_id = "ghost";
    const auto diags = validate_bindings(plan, lx.scene, lx.registry);
    REQUIRE(diags.size() == 1);
    CHECK(diags[0].severity == Diagnostic::Severity::error);
    CHECK(diags[0].constraint_id == "reach_red");
    CHECK(diags[0].message.find("ghost") != std::string::npos);
  }

  SECTION("an empty registry cannot serve any binding") {
    const Registry empty;
    const auto diags = validate_bindings(plan, lx.scene, empty);
    CHECK(diags.size() == 3);
    for (const auto& d : diags) {
      CHECK(d.severity == Diagnostic::Severity::error);
      CHECK(d.message.find("no registered extractor") != std::string::npos);
    }
  }

  SECTION("fine granularity without a region tool warns of degradation") {
    Json slim;
    slim["schema"] = 1;
    slim["lambda_per_second"] = 0.01;
    slim["tools"] = Json::array(
        {{{"name", "center_point"},
          {"output", "point"},
          {"avg_time", 0.3},
          {"noise", {{"model", "gaussian_xyz"}, {"sigma", 0.002}}},
          {"p_succ", {{"*", 0.98}}}}});
    const Registry no_region = registry_from_json(slim, "slim registry");

    plan.stages[0].constraints[0].refs[0].granularity = Granularity::fine;
    const auto diags = validate_bindings(plan, lx.scene, no_region);
    REQUIRE(diags.size() == 1);
    CHECK(diags[0].severity == Diagnostic::Severity::warning);
    CHECK(diags[0].message.find("fine") != std::string::npos);
  }

  SECTION("a broken expression is reported, not thrown") {
    plan.stages[0].constraints[0].expr = "norm(sub(ee_pos(), rep(\"nope\")))";
    const auto diags = validate_bindings(plan, lx.scene, lx.registry);
    REQUIRE(diags.size() == 1);
    CHECK(diags[0].severity == Diagnostic::Severity::error);
  }
}

TEST_CASE("selection failures during grounding name the select phase") {
  Loaded lx = load("pick_place.json", "pick_place.json");
  TaskScriptBackend backend(lx.task);
  const Registry empty;

  try {
    ground_with_cog(lx.task, lx.scene, empty, backend);
    FAIL("expected GroundingError");
  } catch (const GroundingError& e) {
    CHECK(e.phase() == "select");
    CHECK(std::string(e.what()).find("red") != std::string::npos);
  }
}
