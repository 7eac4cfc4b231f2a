// Deterministic interleaving explorer over the two metadata architectures.
//
//   racelab --arch single-writer|owner-driven --scenario <name|file>
//           [--max-depth N] [--max-states N] [--out trace.json]

#include <cstdio>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>

#include "pubsub/racelab.hpp"

using namespace pubsub;

int main(int argc, char** argv) {
  CLI::App app{"explicit-state explorer for pub/sub metadata races"};
  std::string arch_name = "owner-driven";
  std::string scenario_arg = "crash-join";
  std::string out_path;
  int max_depth = 12;
  uint64_t max_states = 1'000'000;
  bool list = false;
  app.add_option("--arch", arch_name, "single-writer or owner-driven");
  app.add_option("--scenario", scenario_arg, "built-in scenario name or JSON file path");
  app.add_option("--max-depth", max_depth, "micro-step depth bound");
  app.add_option("--max-states", max_states, "state count cap");
  app.add_option("--out", out_path, "write the result as JSON");
  app.add_flag("--list-scenarios", list, "list built-in scenarios and exit");
  CLI11_PARSE(app, argc, argv);

  if (list) {
    for (const auto& name : racelab::builtin_scenario_names()) std::printf("%s\n", name.c_str());
    return 0;
  }

  try {
    racelab::Arch arch;
    if (arch_name == "single-writer") {
      arch = racelab::Arch::single_writer;
    } else if (arch_name == "owner-driven") {
      arch = racelab::Arch::owner_driven;
    } else {
      std::fprintf(stderr, "racelab: unknown architecture '%s'\n", arch_name.c_str());
      return 2;
    }

    racelab::Scenario scenario;
    std::ifstream file(scenario_arg);
    if (file) {
      std::ostringstream text;
      text << file.rdbuf();
      scenario = racelab::scenario_from_json(text.str());
    } else {
      scenario = racelab::builtin_scenario(scenario_arg);
    }

    racelab::ExploreLimits limits;
    limits.max_depth = max_depth;
    limits.max_states = max_states;
    auto result = racelab::explore(scenario, arch, limits);

    std::string json = racelab::trace_to_json(scenario, arch, result);
    if (!out_path.empty()) {
      std::ofstream out(out_path);
      out << json << '\n';
      if (!out) {
        std::fprintf(stderr, "racelab: cannot write %s\n", out_path.c_str());
        return 1;
      }
    }
    std::printf("scenario=%s arch=%s states=%llu violations=%zu\n", scenario.name.c_str(),
                arch_name.c_str(), static_cast<unsigned long long>(result.states_visited),
                result.violations.size());
    for (const auto& v : result.violations) {
      std::printf("  %s message=%d trace_len=%zu\n",
                  v.kind == racelab::ViolationKind::premature_reclaim ? "PrematureReclaim"
                                                                      : "PermanentLeak",
                  v.message, v.trace.size());
    }
    if (out_path.empty() && !result.violations.empty())
      std::printf("%s\n", json.c_str());
    return result.violations.empty() ? 0 : 3;
  } catch (const Error& e) {
    std::fprintf(stderr, "racelab: %s\n", e.what());
    return 1;
  }
}
