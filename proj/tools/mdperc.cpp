#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "mdperc_app.hpp"

using namespace mdperc::app;

int main(int argc, char** argv) {
  CLI::App cli{"Majority-dynamics percolation experiments"};
  cli.require_subcommand(1);
  cli.set_version_flag("--version", kVersion);
  std::string config_path, seed, threads, out;
  std::map<std::string, std::map<std::string, std::string>> flag_values;
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, specs] : command_table()) {
    CLI::App* sub = cli.add_subcommand(name);
    sub->add_option("--config", config_path, "JSON config or run manifest");
    sub->add_option("--seed", seed, "master seed");
    sub->add_option("--threads", threads, "worker threads (N or auto)");
    sub->add_option("--out", out, "output directory");
    for (const auto& spec : specs) {
      auto* opt = sub->add_option("--" + spec.key, flag_values[name][spec.key], spec.help + " (default " + spec.fallback.dump() + ")");
      opt->type_name(spec.kind == Kind::text ? "TEXT" : "VALUE");
    }
    subs[name] = sub;
  }
  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = cli.exit(e);
    return code == 0 ? 0 : kValidation;
  }
  try {
    std::string command;
    for (const auto& [name, sub] : subs)
      if (sub->parsed()) command = name;
    json file;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw ValidationError("invalid value for 'config': cannot read " + config_path);
      try {
        file = json::parse(in);
      } catch (const json::exception& e) {
        throw ValidationError("invalid value for 'config': " + std::string(e.what()));
      }
    }
    std::map<std::string, std::string> flags;
    const CLI::App* sub = subs.at(command);
    for (const auto& [key, value] : flag_values[command])
      if (sub->count("--" + key) > 0) flags[key] = value;
    if (sub->count("--seed") > 0) flags["seed"] = seed;
    if (sub->count("--threads") > 0) flags["threads"] = threads;
    if (sub->count("--out") > 0) flags["out"] = out;
    const Settings s = resolve(command, file, flags);
    return execute(s, std::cerr);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const mdperc::ContractViolation& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const mdperc::ResourceError& e) {
    std::cerr << "resource error: " << e.what() << '\n';
    return kResource;
  }
}
