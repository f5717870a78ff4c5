#pragma once

// Benchmark harness.
//
// Runs seeded trials of task scripts against the simulator and aggregates
// them into a report: per-task success rates and times, a failure histogram
// over the five failure classes, and per-trial records.  Ablation modes
// restrict the extractor registry or swap phase-chained grounding for the
// degraded single-shot path; an occlusion sweep re-runs one task across
// increasing occlusion probabilities.
//
// Determinism: every trial derives its own streams from (base_seed, mode,
// task, trial index), worlds and registries are per-trial copies, and
// aggregation walks trials in index order.  Reports are therefore
// byte-identical across repeats and across worker thread counts.

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "trex/cog.hpp"
#include "trex/planner.hpp"
#include "trex/success.hpp"

namespace trex {

struct ModeSpec {
  std::string name = "full";
  std::string grounding = "cog";   // cog | single_shot
  std::vector<std::string> tools;  // registry restriction; empty keeps all
};

struct HarnessConfig {
  std::string name = "benchmark";
  int trials = 30;                  // per task, per mode
  std::uint64_t base_seed = 1;
  double fault_probability = 0.0;   // grounding response corruption rate
  double occlusion = 0.0;           // per-observation occlusion probability
  double noise_scale = 1.0;         // multiplies every tool sigma
  int jobs = 1;                     // worker threads; 0 uses the hardware count
  GroundingOptions grounding;
  PlannerConfig planner;
  std::vector<ModeSpec> modes{ModeSpec{}};
};

struct SuiteTask {
  TaskScript task;
  Scene scene;
};

struct Suite {
  HarnessConfig config;
  Registry registry;
  std::vector<SuiteTask> tasks;
};

struct TrialRecord {
  std::string task;
  std::string mode;
  std::uint64_t seed = 0;
  bool success = false;
  std::string failure_class = "none";
  std::string failure_message;
  std::string failed_stage;
  double grounding_latency = 0.0;
  double extraction_time = 0.0;
  double motion_time = 0.0;
  double sim_time = 0.0;
  int backend_calls = 0;
  int repair_retries = 0;
  int stages_run = 0;
};

// --- suite loading ------------------------------------------------------------

inline Suite suite_load(const std::string& path) {
  const Json doc = load_json_file(path);
  const std::string where = path;
  const int schema = static_cast<int>(require_number(doc, "schema", where));
  if (schema != 1) throw ParseError(where + ": unsupported schema version");

  Suite suite;
  suite.config.name = require_string(doc, "name", where);
  suite.config.trials = static_cast<int>(doc.value("trials", 30.0));
  if (suite.config.trials < 1) throw ParseError(where + ": trials must be >= 1");
  suite.config.base_seed = doc.value("base_seed", 1ull);
  suite.config.fault_probability = doc.value("fault_probability", 0.0);
  suite.config.occlusion = doc.value("occlusion", 0.0);
  suite.config.noise_scale = doc.value("noise_scale", 1.0);
  if (doc.contains("grounding")) {
    const Json& jg = doc.at("grounding");
    suite.config.grounding.repair_retries =
        static_cast<int>(jg.value("repair_retries", 2.0));
    suite.config.grounding.call_latency = jg.value("call_latency", 1.0);
    if (suite.config.grounding.repair_retries < 0) {
      throw ParseError(where + ": repair_retries must be >= 0");
    }
  }

  const auto dir = std::filesystem::path(path).parent_path();
  suite.registry =
      registry_load((dir / require_string(doc, "registry", where)).string());

  const Json& jtasks = require_field(doc, "tasks", where);
  if (!jtasks.is_array() || jtasks.empty()) {
    throw ParseError(where + ": 'tasks' must be a non-empty array of paths");
  }
  for (const Json& jt : jtasks) {
    const auto task_path = dir / jt.get<std::string>();
    SuiteTask st;
    st.task = task_script_load(task_path.string());
    st.scene = scene_load((task_path.parent_path() / st.task.scene_path).string());
    suite.tasks.push_back(std::move(st));
  }

  if (doc.contains("modes")) {
    suite.config.modes.clear();
    for (const Json& jm : doc.at("modes")) {
      ModeSpec m;
      m.name = require_string(jm, "name", where + " modes");
      m.grounding = jm.value("grounding", "cog");
      if (m.grounding != "cog" && m.grounding != "single_shot") {
        throw ParseError(where + ": mode '" + m.name +
                         "': grounding must be cog or single_shot");
      }
      for (const Json& jt : jm.value("tools", Json::array())) {
        m.tools.push_back(jt.get<std::string>());
      }
      suite.config.modes.push_back(std::move(m));
    }
    if (suite.config.modes.empty()) {
      throw ParseError(where + ": 'modes' must not be empty");
    }
  }
  return suite;
}

// --- single trial -------------------------------------------------------------

// The registry a mode actually runs with: restricted tool set, scaled noise.
inline Registry mode_registry(const Registry& base, const ModeSpec& mode,
                              double noise_scale) {
  Registry reg;
  reg.schema = base.schema;
  reg.lambda_per_second = base.lambda_per_second;
  reg.fine_sigma_factor = base.fine_sigma_factor;
  for (const ToolSpec& t : base.tools) {
    if (!mode.tools.empty() &&
        std::find(mode.tools.begin(), mode.tools.end(), t.name) ==
            mode.tools.end()) {
      continue;
    }
    ToolSpec copy = t;
    copy.noise.sigma *= noise_scale;
    copy.noise.sigma_rot *= noise_scale;
    reg.tools.push_back(std::move(copy));
  }
  if (reg.tools.empty()) {
    throw Error("mode '" + mode.name + "' leaves the registry empty");
  }
  return reg;
}

inline TrialRecord run_trial(const TaskScript& task, const Scene& scene,
                             const Registry& base_registry, const ModeSpec& mode,
                             std::uint64_t seed, const HarnessConfig& cfg) {
  TrialRecord rec;
  rec.task = task.name;
  rec.mode = mode.name;
  rec.seed = seed;

  Rng root(seed);
  Registry registry = mode_registry(base_registry, mode, cfg.noise_scale);
  SimWorld world(scene);
  world.set_occlusion_probability(cfg.occlusion);
  Rng scene_rng = root.derive("scene");
  world.randomize(scene_rng);  // authoring errors propagate loudly

  TaskScriptBackend script(task);
  FaultInjectingBackend backend(script, cfg.fault_probability,
                                root.derive("faults"));
  try {
    GroundedPlan plan =
        mode.grounding == "single_shot"
            ? ground_single_shot(task, world.scene(), registry, backend,
                                 cfg.grounding)
            : ground_with_cog(task, world.scene(), registry, backend,
                              cfg.grounding);
    rec.grounding_latency = plan.grounding_latency;
    rec.backend_calls = plan.backend_calls;
    rec.repair_retries = plan.repair_retries_used;

    Rng exec_rng = root.derive("exec");
    const ExecutionResult er =
        execute_plan(world, registry, plan, exec_rng, cfg.planner);
    rec.extraction_time = er.extraction_time;
    rec.motion_time = er.motion_time;
    rec.stages_run = static_cast<int>(er.stages.size());
    rec.sim_time = world.sim_time();
    if (!er.completed) {
      rec.failure_class = failure_class_name(er.failure);
      rec.failure_message = er.failure_message;
      rec.failed_stage = er.failed_stage;
      return rec;
    }
    const SuccessOutcome goal = evaluate_success(world, task.success);
    if (goal.ok) {
      rec.success = true;
    } else {
      rec.failure_class = failure_class_name(FailureClass::other);
      rec.failure_message = "goal predicate not met: " + goal.unmet;
    }
  } catch (const std::exception& e) {
    rec.failure_class = failure_class_name(classify_failure(e));
    rec.failure_message = e.what();
    rec.sim_time = world.sim_time();
  }
  return rec;
}

// Per-trial seed, a pure function of suite seed, mode, task, and index.
inline std::uint64_t trial_seed(std::uint64_t base_seed, const std::string& mode,
                                const std::string& task, int index) {
  Rng stream = Rng(base_seed).derive(mode).derive(task, static_cast<std::uint64_t>(index));
  return stream.next_u64();
}

// --- suite run ------------------------------------------------------------------

namespace harness_detail {

struct TrialSlot {
  const ModeSpec* mode = nullptr;
  const SuiteTask* task = nullptr;
  std::uint64_t seed = 0;
};

inline double round_to(double x, int digits) {
  const double scale = std::pow(10.0, digits);
  const double r = std::round(x * scale) / scale;
  return r == 0.0 ? 0.0 : r;  // normalizes -0
}

}  // namespace harness_detail

inline std::vector<TrialRecord> run_trials(const Suite& suite) {
  using harness_detail::TrialSlot;
  const HarnessConfig& cfg = suite.config;

  std::vector<TrialSlot> slots;
  for (const ModeSpec& mode : cfg.modes) {
    for (const SuiteTask& st : suite.tasks) {
      for (int k = 0; k < cfg.trials; ++k) {
        slots.push_back(TrialSlot{
            &mode, &st, trial_seed(cfg.base_seed, mode.name, st.task.name, k)});
      }
    }
  }

  std::vector<TrialRecord> results(slots.size());
  unsigned jobs = cfg.jobs > 0 ? static_cast<unsigned>(cfg.jobs)
                               : std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min<unsigned>(jobs, slots.size() == 0 ? 1 : slots.size());

  if (jobs <= 1) {
    for (std::size_t i = 0; i < slots.size(); ++i) {
      const TrialSlot& s = slots[i];
      results[i] = run_trial(s.task->task, s.task->scene, suite.registry,
                             *s.mode, s.seed, cfg);
    }
    return results;
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= slots.size()) return;
      const TrialSlot& s = slots[i];
      try {
        results[i] = run_trial(s.task->task, s.task->scene, suite.registry,
                               *s.mode, s.seed, cfg);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < jobs; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
  return results;
}

// --- reporting ------------------------------------------------------------------

inline Json trial_to_json(const TrialRecord& r) {
  using harness_detail::round_to;
  Json j;
  j["task"] = r.task;
  j["mode"] = r.mode;
  j["seed"] = r.seed;
  j["success"] = r.success;
  j["failure_class"] = r.failure_class;
  if (!r.failure_message.empty()) j["failure_message"] = r.failure_message;
  if (!r.failed_stage.empty()) j["failed_stage"] = r.failed_stage;
  j["grounding_latency"] = round_to(r.grounding_latency, 4);
  j["extraction_time"] = round_to(r.extraction_time, 4);
  j["motion_time"] = round_to(r.motion_time, 4);
  j["sim_time"] = round_to(r.sim_time, 4);
  j["backend_calls"] = r.backend_calls;
  j["repair_retries"] = r.repair_retries;
  j["stages_run"] = r.stages_run;
  return j;
}

// Aggregates trials into the benchmark report.  Failure histograms span all
// five classes; their sum equals trials minus successes by construction.
inline Json make_report(const Suite& suite, const std::vector<TrialRecord>& trials) {
  using harness_detail::round_to;
  const HarnessConfig& cfg = suite.config;

  Json report;
  report["schema"] = 1;
  report["suite"] = cfg.name;
  report["base_seed"] = cfg.base_seed;
  report["trials_per_task"] = cfg.trials;
  report["fault_probability"] = cfg.fault_probability;
  report["occlusion"] = cfg.occlusion;
  report["noise_scale"] = cfg.noise_scale;

  const std::vector<std::string> classes = {
      failure_class_name(FailureClass::planning),
      failure_class_name(FailureClass::toolkit_extraction),
      failure_class_name(FailureClass::representation_tracking),
      failure_class_name(FailureClass::action_generation),
      failure_class_name(FailureClass::other)};

  Json jmodes = Json::array();
  for (const ModeSpec& mode : cfg.modes) {
    struct Agg {
      int n = 0, ok = 0;
      double ext = 0, mot = 0, ground = 0, sim = 0;
    };
    Agg total;
    std::map<std::string, Agg> by_task;
    std::map<std::string, int> histogram;
    for (const auto& c : classes) histogram[c] = 0;

    for (const TrialRecord& r : trials) {
      if (r.mode != mode.name) continue;
      Agg& a = by_task[r.task];
      for (Agg* t : {&a, &total}) {
        t->n += 1;
        t->ok += r.success ? 1 : 0;
        t->ext += r.extraction_time;
        t->mot += r.motion_time;
        t->ground += r.grounding_latency;
        t->sim += r.sim_time;
      }
      if (!r.success) histogram.at(r.failure_class) += 1;
    }

    Json jm;
    jm["name"] = mode.name;
    jm["grounding"] = mode.grounding;
    jm["trials"] = total.n;
    jm["successes"] = total.ok;
    jm["success_pct"] = total.n ? round_to(100.0 * total.ok / total.n, 1) : 0.0;
    jm["avg_extraction_time"] = total.n ? round_to(total.ext / total.n, 3) : 0.0;
    jm["avg_motion_time"] = total.n ? round_to(total.mot / total.n, 3) : 0.0;
    jm["avg_grounding_latency"] = total.n ? round_to(total.ground / total.n, 3) : 0.0;
    jm["failure_histogram"] = histogram;

    Json jtasks = Json::array();
    for (const SuiteTask& st : suite.tasks) {
      auto it = by_task.find(st.task.name);
      if (it == by_task.end()) continue;
      const Agg& a = it->second;
      Json jt;
      jt["task"] = st.task.name;
      jt["trials"] = a.n;
      jt["successes"] = a.ok;
      jt["success_pct"] = round_to(100.0 * a.ok / a.n, 1);
      jt["avg_time"] = round_to(a.sim / a.n, 2);
      jt["avg_extraction_time"] = round_to(a.ext / a.n, 3);
      jt["avg_motion_time"] = round_to(a.mot / a.n, 3);
      jtasks.push_back(jt);
    }
    jm["tasks"] = jtasks;
    jmodes.push_back(jm);
  }
  report["modes"] = jmodes;

  Json jtrials = Json::array();
  for (const TrialRecord& r : trials) jtrials.push_back(trial_to_json(r));
  report["trial_records"] = jtrials;
  return report;
}

inline Json run_suite(const Suite& suite) {
  return make_report(suite, run_trials(suite));
}

// Plain-text summary of one mode: a task table plus a Total row.
inline std::string render_table(const Json& report, const std::string& mode_name) {
  const Json* jm = nullptr;
  for (const Json& m : report.at("modes")) {
    if (m.at("name") == mode_name) {
      jm = &m;
      break;
    }
  }
  if (!jm) throw LookupError("report has no mode '" + mode_name + "'");

  std::size_t name_w = 5;  // "Total"
  for (const Json& jt : jm->at("tasks")) {
    name_w = std::max(name_w, jt.at("task").get<std::string>().size());
  }
  auto fmt_row = [&](const std::string& name, double pct, double time) {
    char buf[64];
    std::snprintf(buf, sizeof buf, " | %6.1f%% | %8.2f\n", pct, time);
    std::string row = name;
    row.append(name_w - name.size(), ' ');
    return row + buf;
  };
  std::string out = "Task";
  out.append(name_w - 4, ' ');
  out += " | Success | Time(s)\n";
  out.append(name_w, '-');
  out += "-+---------+---------\n";
  double sim_total = 0.0;
  int n_total = 0;
  for (const Json& jt : jm->at("tasks")) {
    out += fmt_row(jt.at("task"), jt.at("success_pct"), jt.at("avg_time"));
    sim_total += jt.at("avg_time").get<double>() * jt.at("trials").get<int>();
    n_total += jt.at("trials").get<int>();
  }
  out.append(name_w, '-');
  out += "-+---------+---------\n";
  out += fmt_row("Total", jm->at("success_pct"),
                 n_total ? sim_total / n_total : 0.0);
  return out;
}

// --- occlusion sweep --------------------------------------------------------------

// Re-runs one task at each occlusion level and reports how the failure mass
// shifts toward tracking losses.  `tracking_share` is the fraction of trials
// lost to representation tracking.
inline Json run_occlusion_sweep(const SuiteTask& st, const Registry& registry,
                                const std::vector<double>& levels,
                                int trials_per_level, const HarnessConfig& base_cfg) {
  using harness_detail::round_to;
  Json out;
  out["task"] = st.task.name;
  out["trials_per_level"] = trials_per_level;
  Json jlevels = Json::array();
  const ModeSpec mode;  // full registry, phase-chained grounding
  for (std::size_t li = 0; li < levels.size(); ++li) {
    HarnessConfig cfg = base_cfg;
    cfg.occlusion = levels[li];
    std::map<std::string, int> histogram;
    int ok = 0;
    for (int k = 0; k < trials_per_level; ++k) {
      const std::uint64_t seed =
          trial_seed(cfg.base_seed, "sweep/" + std::to_string(li), st.task.name, k);
      const TrialRecord rec =
          run_trial(st.task, st.scene, registry, mode, seed, cfg);
      if (rec.success) {
        ++ok;
      } else {
        histogram[rec.failure_class] += 1;
      }
    }
    Json jl;
    jl["occlusion"] = levels[li];
    jl["trials"] = trials_per_level;
    jl["successes"] = ok;
    jl["failure_histogram"] = histogram;
    jl["tracking_share"] = round_to(
        static_cast<double>(histogram[failure_class_name(
            FailureClass::representation_tracking)]) /
            trials_per_level,
        4);
    jlevels.push_back(jl);
  }
  out["levels"] = jlevels;
  return out;
}

}  // namespace trex
