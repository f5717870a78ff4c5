// Command-line front end for the benchmark pipeline.
//
// Subcommands:
//   validate  parse a registry / scene / task / suite file and dry-ground tasks
//   ground    run instruction grounding for one task and print the plan
//   trial     run a single seeded trial and print its record
//   run       run the whole suite and write the aggregate report
//   sweep     re-run one task across occlusion levels
//   report    render tables from an existing report file
//
// Exit codes: 0 success, 1 operation failed, 2 bad usage or unreadable input.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "trex/trex.hpp"

namespace {

using trex::Json;

void write_or_print(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text << "\n";
    return;
  }
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw trex::Error("cannot write '" + out_path + "'");
  out << text << "\n";
}

const trex::ModeSpec& find_mode(const trex::Suite& suite, const std::string& name) {
  for (const auto& m : suite.config.modes) {
    if (m.name == name) return m;
  }
  throw trex::LookupError("suite has no mode '" + name + "'");
}

const trex::SuiteTask& find_task(const trex::Suite& suite, const std::string& name) {
  for (const auto& t : suite.tasks) {
    if (t.task.name == name) return t;
  }
  throw trex::LookupError("suite has no task '" + name + "'");
}

// Grounds every task against its own script with no injected faults; catches
// authoring errors (bad expressions, unknown parts, unservable bindings).
int dry_ground(const trex::Suite& suite) {
  int bad = 0;
  for (const auto& st : suite.tasks) {
    try {
      trex::TaskScriptBackend backend(st.task);
      const trex::GroundedPlan plan =
          trex::ground_with_cog(st.task, st.scene, suite.registry, backend);
      std::size_t n_constraints = 0;
      for (const auto& s : plan.stages) n_constraints += s.constraints.size();
      std::cout << "  task '" << st.task.name << "': " << plan.stages.size()
                << " stages, " << n_constraints << " constraints, "
                << plan.program.size() << " program steps\n";
    } catch (const std::exception& e) {
      std::cout << "  task '" << st.task.name << "': FAILED: " << e.what() << "\n";
      ++bad;
    }
  }
  return bad;
}

int cmd_validate(const std::string& path) {
  const Json doc = trex::load_json_file(path);
  if (doc.contains("tools")) {
    const trex::Registry reg = trex::registry_from_json(doc, path);
    std::cout << "registry ok: " << reg.tools.size() << " tools\n";
    return 0;
  }
  if (doc.contains("workspace") && doc.contains("objects")) {
    const trex::Scene scene = trex::scene_from_json(doc, path);
    trex::SimWorld world(scene);
    std::cout << "scene ok: " << scene.objects.size() << " objects\n";
    return 0;
  }
  if (doc.contains("instruction") && doc.contains("stages")) {
    const trex::TaskScript task = trex::task_script_from_json(doc, path);
    const auto dir = std::filesystem::path(path).parent_path();
    const trex::Scene scene = trex::scene_load((dir / task.scene_path).string());
    std::cout << "task ok: '" << task.name << "' against scene '" << scene.name
              << "'\n";
    return 0;
  }
  if (doc.contains("registry") && doc.contains("tasks")) {
    const trex::Suite suite = trex::suite_load(path);
    std::cout << "suite ok: " << suite.tasks.size() << " tasks, "
              << suite.config.modes.size() << " modes\n";
    const int bad = dry_ground(suite);
    return bad == 0 ? 0 : 1;
  }
  throw trex::ParseError(path + ": not a registry, scene, task, or suite file");
}

struct Overrides {
  int trials = -1;
  int jobs = -1;
  double fault_prob = -1.0;
  double occlusion = -1.0;
  double noise = -1.0;
  std::int64_t seed = -1;

  void apply(trex::HarnessConfig& cfg) const {
    if (trials >= 0) cfg.trials = trials;
    if (jobs >= 0) cfg.jobs = jobs;
    if (fault_prob >= 0.0) cfg.fault_probability = fault_prob;
    if (occlusion >= 0.0) cfg.occlusion = occlusion;
    if (noise >= 0.0) cfg.noise_scale = noise;
    if (seed >= 0) cfg.base_seed = static_cast<std::uint64_t>(seed);
  }
};

void add_override_flags(CLI::App* cmd, Overrides& ov) {
  cmd->add_option("--trials", ov.trials, "trials per task and mode");
  cmd->add_option("--fault-prob", ov.fault_prob, "grounding fault probability");
  cmd->add_option("--occlusion", ov.occlusion, "per-observation occlusion probability");
  cmd->add_option("--noise", ov.noise, "noise scale on every tool sigma");
  cmd->add_option("--seed", ov.seed, "base seed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale manipulation benchmark"};
  app.require_subcommand(1);

  std::string path, out_path, task_name, mode_name = "full";
  Overrides ov;

  auto* validate = app.add_subcommand("validate", "check a fixture file");
  validate->add_option("path", path, "registry, scene, task, or suite file")
      ->required();

  auto* ground = app.add_subcommand("ground", "ground one task and print the plan");
  std::string registry_path;
  bool single_shot = false;
  ground->add_option("path", path, "task script")->required();
  ground->add_option("--registry", registry_path, "extractor registry")->required();
  ground->add_flag("--single-shot", single_shot, "use the degraded merged call");

  auto* trial = app.add_subcommand("trial", "run one seeded trial");
  int index = 0;
  trial->add_option("path", path, "suite file")->required();
  trial->add_option("--task", task_name, "task name")->required();
  trial->add_option("--mode", mode_name, "mode name");
  trial->add_option("--index", index, "trial index");
  add_override_flags(trial, ov);

  auto* run = app.add_subcommand("run", "run the whole suite");
  bool quiet = false;
  run->add_option("path", path, "suite file")->required();
  run->add_option("-o,--out", out_path, "write the JSON report here");
  run->add_option("--jobs", ov.jobs, "worker threads (0 = hardware)");
  run->add_flag("-q,--quiet", quiet, "skip the per-mode tables");
  add_override_flags(run, ov);

  auto* sweep = app.add_subcommand("sweep", "occlusion sweep over one task");
  std::vector<double> levels{0.0, 0.2, 0.4, 0.6, 0.8};
  int sweep_trials = 20;
  sweep->add_option("path", path, "suite file")->required();
  sweep->add_option("--task", task_name, "task name")->required();
  sweep->add_option("--levels", levels, "occlusion levels")->delimiter(',');
  sweep->add_option("--trials", sweep_trials, "trials per level");
  sweep->add_option("-o,--out", out_path, "write the sweep JSON here");

  auto* report = app.add_subcommand("report", "render tables from a report file");
  report->add_option("path", path, "report JSON")->required();
  report->add_option("--mode", mode_name, "single mode to render");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*validate) return cmd_validate(path);

    if (*ground) {
      const trex::TaskScript task = trex::task_script_load(path);
      const auto dir = std::filesystem::path(path).parent_path();
      const trex::Scene scene = trex::scene_load((dir / task.scene_path).string());
      const trex::Registry registry = trex::registry_load(registry_path);
      trex::TaskScriptBackend backend(task);
      const trex::GroundedPlan plan =
          single_shot ? trex::ground_single_shot(task, scene, registry, backend)
                      : trex::ground_with_cog(task, scene, registry, backend);
      std::cout << trex::plan_to_json(plan).dump(2) << "\n";
      return 0;
    }

    if (*trial) {
      trex::Suite suite = trex::suite_load(path);
      ov.apply(suite.config);
      const trex::ModeSpec& mode = find_mode(suite, mode_name);
      const trex::SuiteTask& st = find_task(suite, task_name);
      const std::uint64_t seed =
          trex::trial_seed(suite.config.base_seed, mode.name, st.task.name, index);
      const trex::TrialRecord rec =
          trex::run_trial(st.task, st.scene, suite.registry, mode, seed, suite.config);
      std::cout << trex::trial_to_json(rec).dump(2) << "\n";
      return 0;
    }

    if (*run) {
      trex::Suite suite = trex::suite_load(path);
      ov.apply(suite.config);
      const Json rep = trex::run_suite(suite);
      if (!out_path.empty()) {
        write_or_print(trex::canonical_dump(rep), out_path);
        std::cout << "report written to " << out_path << "\n";
      }
      if (!quiet) {
        for (const Json& jm : rep.at("modes")) {
          std::cout << "\n== mode " << jm.at("name").get<std::string>() << " ("
                    << jm.at("grounding").get<std::string>() << ") ==\n";
          std::cout << trex::render_table(rep, jm.at("name"));
          std::cout << "failures:";
          for (const auto& [cls, n] : jm.at("failure_histogram").items()) {
            if (n.get<int>() > 0) std::cout << " " << cls << "=" << n.get<int>();
          }
          std::cout << "\n";
        }
      }
      return 0;
    }

    if (*sweep) {
      trex::Suite suite = trex::suite_load(path);
      const trex::SuiteTask& st = find_task(suite, task_name);
      trex::HarnessConfig cfg = suite.config;
      cfg.fault_probability = 0.0;  // isolate tracking loss
      const Json out =
          trex::run_occlusion_sweep(st, suite.registry, levels, sweep_trials, cfg);
      write_or_print(out.dump(2), out_path);
      return 0;
    }

    if (*report) {
      const Json rep = trex::load_json_file(path);
      if (report->count("--mode")) {
        std::cout << trex::render_table(rep, mode_name);
        return 0;
      }
      for (const Json& jm : rep.at("modes")) {
        std::cout << "\n== mode " << jm.at("name").get<std::string>() << " ==\n"
                  << trex::render_table(rep, jm.at("name"));
      }
      return 0;
    }
  } catch (const trex::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
