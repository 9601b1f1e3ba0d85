// gammaphase <command> --config <path> [--out <dir>] [--seed <u64>] [--threads <n>]

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "gammaphase/cli.hpp"

namespace {

std::optional<std::string> slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) return std::nullopt;
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int env_threads() {
  const char* v = std::getenv("GAMMAPHASE_THREADS");
  if (v == nullptr || *v == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1 || n > 1024) {
    std::cerr << "gammaphase: ignoring invalid GAMMAPHASE_THREADS=" << v << "\n";
    return 1;
  }
  return static_cast<int>(n);
}

}  // namespace

int main(int argc, char** argv) {
  namespace gc = gammaphase::cli;
  CLI::App app{"Phase-field energy minimisation and sharp-interface verification campaigns"};
  app.set_version_flag("--version", std::string("gammaphase ") + GAMMAPHASE_VERSION);

  std::string command, config, out;
  std::uint64_t seed = 0;
  int threads = 0;
  std::vector<std::string> names;
  for (const auto& [name, cmd] : gc::command_names()) names.push_back(name);

  app.add_option("command", command, "Command to run")->required()->check(CLI::IsMember(names));
  app.add_option("--config,-c", config, "JSON run configuration")->required();
  auto* out_opt = app.add_option("--out,-o", out, "Parent directory for the run directory");
  auto* seed_opt = app.add_option("--seed", seed, "Override solve.seed");
  auto* threads_opt = app.add_option("--threads", threads, "Worker threads (default: GAMMAPHASE_THREADS or 1)")
                          ->check(CLI::Range(1, 1024));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : gc::kExitInvalid;
  }

  const gc::Command cmd = *gc::parse_command(command);
  std::optional<std::string> o;
  if (*out_opt) o = out;
  std::optional<std::uint64_t> s;
  if (*seed_opt) s = seed;
  const int n = *threads_opt ? threads : env_threads();

  try {
    const gc::RunResult r = gc::run(cmd, slurp(config), config, o, s, n);
    std::cout << r.run_dir.string() << "\n";
    if (r.manifest.contains("error")) {
      std::cerr << "gammaphase " << command << ": " << r.manifest["error"]["type"].get<std::string>() << ": "
                << r.manifest["error"]["message"].get<std::string>() << "\n";
    }
    return r.exit_code;
  } catch (const std::exception& e) {
    std::cerr << "gammaphase " << command << ": " << e.what() << "\n";
    return gc::kExitFailure;
  }
}
