#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ssl/ssl.hpp"

namespace {

// "key=value" pairs become a config document. Bare keys go to `section`;
// "section.key=value" picks another one. Non-numeric values are quoted.
std::string pairs_to_config(const std::string& kind, const std::string& section,
                            const std::vector<std::string>& pairs) {
  std::string root = "kind = \"" + kind + "\"\n";
  std::vector<std::pair<std::string, std::string>> sections;
  auto body = [&](const std::string& name) -> std::string& {
    for (auto& [n, b] : sections) {
      if (n == name) return b;
    }
    sections.emplace_back(name, "");
    return sections.back().second;
  };
  for (const auto& kv : pairs) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw ssl::ConfigError("expected key=value, got '" + kv + "'", 0);
    std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
    const bool literal = value == "true" || value == "false" || (!value.empty() && value.front() == '[') ||
                         [&] {
                           try {
                             ssl::parse_double(value, 0);
                             return true;
                           } catch (const ssl::ConfigError&) {
                             return false;
                           }
                         }();
    if (!literal) value = "\"" + value + "\"";
    if (key == "d" && kind == "schedule") {
      const auto d = static_cast<std::size_t>(ssl::parse_double(value, 0));
      std::string mean = "[";
      for (std::size_t j = 0; j < d; ++j) mean += j ? ", 0" : "0";
      body("[target.component]") += "mean = " + mean + "]\n";
      continue;
    }
    const auto dot = key.find('.');
    if (dot == std::string::npos) {
      body(section) += key + " = " + value + "\n";
    } else {
      body(key.substr(0, dot)) += key.substr(dot + 1) + " = " + value + "\n";
    }
  }
  std::string text = root;
  for (const auto& [n, b] : sections) text += "[" + n + "]\n" + b;
  return text;
}

int print_only(const std::string& kind, const std::string& section, const std::vector<std::string>& pairs,
               bool csv) {
  try {
    const ssl::ExperimentConfig c = ssl::parse_config(pairs_to_config(kind, section, pairs));
    const ssl::RunOutput out = ssl::execute(c);
    std::cout << (csv ? out.csv : out.summary);
    return out.exit_code;
  } catch (const ssl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return ssl::kExitBadConfig;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Score-based sampling experiments"};
  app.require_subcommand(1);
  unsigned threads = 0;
  app.add_option("--threads", threads, "worker threads (SSL_THREADS overrides)");

  std::string config_path, output_dir;
  auto* run = app.add_subcommand("run", "run the experiment described by a config file");
  run->add_option("config", config_path, "config file")->required();
  run->add_option("-o,--output", output_dir, "output directory (default: the config's `output`)");

  std::string suite;
  auto* verify = app.add_subcommand("verify", "run an acceptance suite: closed_forms, soundness, simulation or all");
  verify->add_option("suite", suite, "suite name")->required();

  std::vector<std::string> schedule_pairs, bounds_pairs;
  bool csv = false;
  auto* schedule = app.add_subcommand("schedule", "print an annealing schedule from key=value parameters");
  schedule->add_option("params", schedule_pairs, "e.g. d=2 sigma_min2=0.01 lsi=1 eps_tv=0.1");
  schedule->add_flag("--csv", csv, "print the CSV instead of the summary");
  auto* bounds = app.add_subcommand("bounds", "print a bound report from key=value parameters");
  bounds->add_option("params", bounds_pairs, "e.g. theorem=lmc d=1 L=1 lsi=1 h=1e-4 steps=100 chi0=1");
  bounds->add_flag("--csv", csv, "print the CSV instead of the summary");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : ssl::kExitBadConfig;
  }

  if (*run) {
    ssl::ExperimentConfig c;
    try {
      c = ssl::load_config(config_path);
    } catch (const ssl::ConfigError& e) {
      std::cerr << config_path << ": " << e.what() << "\n";
      return ssl::kExitBadConfig;
    }
    if (threads > 0) c.threads = threads;
    return ssl::run(c, output_dir.empty() ? c.output : output_dir, std::cout);
  }
  if (*verify) {
    if (!ssl::is_suite(suite)) {
      std::cerr << "unknown suite '" << suite << "' (closed_forms, soundness, simulation, all)\n";
      return 1;
    }
    return ssl::verify_suite(suite, std::cout) ? 0 : 1;
  }
  if (*schedule) return print_only("schedule", "anneal", schedule_pairs, csv);
  return print_only("bounds", "bounds", bounds_pairs, csv);
}
