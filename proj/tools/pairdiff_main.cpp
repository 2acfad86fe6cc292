// pairdiff pipeline driver. Thin wrapper over the C API: every subcommand
// takes --config and repeatable --set key=value overrides, and the process
// exit code is the pd_status of the run.

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <pairdiff.h>

int main(int argc, char** argv) {
  CLI::App app{std::string("pairdiff ") + pd_version() +
               " - joint image/mask synthesis for segmentation augmentation"};
  app.require_subcommand(1);

  struct Invocation {
    std::string name;
    std::string config;
    std::vector<std::string> overrides;
  };
  std::vector<Invocation> slots(pd_subcommand_count());

  for (size_t i = 0; i < pd_subcommand_count(); ++i) {
    Invocation& inv = slots[i];
    inv.name = pd_subcommand_name(i);
    CLI::App* sub = app.add_subcommand(inv.name, "Run the " + inv.name + " stage");
    sub->add_option("-c,--config", inv.config, "Experiment config file (key=value lines)");
    sub->add_option("-s,--set", inv.overrides,
                    "Override a config key, e.g. --set out_dir=runs/a (repeatable)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : PD_ERR_CONFIG;  // bad usage is a config error
  }

  for (const Invocation& inv : slots) {
    if (!app.got_subcommand(inv.name)) continue;
    std::vector<const char*> ov;
    ov.reserve(inv.overrides.size());
    for (const std::string& s : inv.overrides) ov.push_back(s.c_str());
    const pd_status st = pd_run(inv.name.c_str(), inv.config.empty() ? nullptr : inv.config.c_str(),
                                ov.data(), ov.size());
    if (st != PD_OK) {
      std::fprintf(stderr, "pairdiff %s: %s: %s\n", inv.name.c_str(), pd_status_name(st),
                   pd_last_error());
    }
    return st;
  }
  return PD_ERR_CONFIG;
}
