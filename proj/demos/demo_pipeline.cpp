// Walks one task end to end: ground the instruction through the phase-chained
// path, execute the plan against the simulator, and print what happened at
// each step.  Takes a suite file and task name; defaults to the bundled
// fixtures and the marker insertion task.

#include <iostream>
#include <string>

#include "trex/trex.hpp"

int main(int argc, char** argv) {
  const std::string suite_path =
      argc > 1 ? argv[1] : std::string(TREX_SOURCE_DIR) + "/fixtures/suite.json";
  const std::string task_name = argc > 2 ? argv[2] : "marker_insert";

  try {
    const trex::Suite suite = trex::suite_load(suite_path);
    const trex::SuiteTask* st = nullptr;
    for (const auto& t : suite.tasks) {
      if (t.task.name == task_name) st = &t;
    }
    if (!st) {
      std::cerr << "suite has no task '" << task_name << "'\n";
      return 2;
    }

    std::cout << "instruction: " << st->task.instruction << "\n\n";

    trex::Rng root(suite.config.base_seed);
    trex::Registry registry = suite.registry;  // execution updates tool stats
    trex::SimWorld world(st->scene);
    trex::Rng scene_rng = root.derive("scene");
    world.randomize(scene_rng);

    trex::TaskScriptBackend backend(st->task);
    const trex::GroundedPlan plan =
        trex::ground_with_cog(st->task, world.scene(), registry, backend);

    std::cout << "grounded " << plan.stages.size() << " stages with "
              << plan.backend_calls << " backend calls:\n";
    for (const auto& stage : plan.stages) {
      std::cout << "  stage " << stage.name << "\n";
      for (const auto& c : stage.constraints) {
        std::cout << "    [" << c.id << "] " << c.expr
                  << "  (tol " << c.tolerance << ")\n";
        for (const auto& ref : c.refs) {
          std::cout << "      " << ref.binding << " <- " << ref.tool << "\n";
        }
      }
    }

    trex::Rng exec_rng = root.derive("exec");
    const trex::ExecutionResult er =
        trex::execute_plan(world, registry, plan, exec_rng, {});

    std::cout << "\nexecution " << (er.completed ? "completed" : "FAILED") << "\n";
    for (const auto& s : er.stages) {
      std::cout << "  " << s.name << ": solver "
                << (s.solver_converged ? "converged" : "did not converge")
                << " in " << s.solver_iterations << " iters, extraction "
                << s.extraction_time << "s, motion " << s.motion_time << "s\n";
    }
    if (!er.completed) {
      std::cout << "  failure [" << trex::failure_class_name(er.failure) << "] "
                << er.failure_message << "\n";
      return 1;
    }

    const trex::SuccessOutcome goal = trex::evaluate_success(world, st->task.success);
    std::cout << "goal " << (goal.ok ? "met" : "NOT met: " + goal.unmet) << "\n";
    std::cout << "sim time " << world.sim_time() << "s\n";
    return goal.ok ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
