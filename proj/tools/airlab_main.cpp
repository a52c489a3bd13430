// Workbench driver. Every subcommand loads one run config (JSON file plus
// AIRLAB_* environment overrides) and maps onto a single C API call, so the
// shared library stays the only entry point into the core.
#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "airlab.h"

namespace {

const char* status_name(airlab_status s) {
  switch (s) {
    case AIRLAB_OK:
      return "ok";
    case AIRLAB_ERR_CONFIG:
      return "config";
    case AIRLAB_ERR_INVALID_ARGUMENT:
      return "invalid argument";
    case AIRLAB_ERR_STATE:
      return "state";
    case AIRLAB_ERR_IO:
      return "io";
    default:
      return "internal";
  }
}

airlab_workbench* open_workbench(const std::string& config_path) {
  airlab_workbench* wb = nullptr;
  char errbuf[1024];
  const airlab_status s =
      config_path.empty() ? airlab_open_json("{}", &wb, errbuf, sizeof errbuf)
                          : airlab_open_file(config_path.c_str(), &wb, errbuf, sizeof errbuf);
  if (s != AIRLAB_OK) {
    std::fprintf(stderr, "airlab: %s error: %s\n", status_name(s), errbuf);
    return nullptr;
  }
  return wb;
}

int finish(airlab_workbench* wb, airlab_status s) {
  if (s != AIRLAB_OK)
    std::fprintf(stderr, "airlab: %s error: %s\n", status_name(s), airlab_last_error(wb));
  airlab_close(wb);
  return s == AIRLAB_OK ? 1 : 0;  // callers treat nonzero as success below
}

// Fetches a sized string through the two-call buffer protocol.
airlab_status fetch(airlab_workbench* wb,
                    airlab_status (*fn)(airlab_workbench*, char*, size_t, size_t*),
                    std::string* out) {
  size_t needed = 0;
  airlab_status s = fn(wb, nullptr, 0, &needed);
  if (s != AIRLAB_OK) return s;
  std::vector<char> buf(needed);
  s = fn(wb, buf.data(), buf.size(), nullptr);
  if (s == AIRLAB_OK) out->assign(buf.data());
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"instruction-privilege workbench"};
  app.set_version_flag("--version", airlab_version());
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("-c,--config", config_path, "run config JSON file")
      ->check(CLI::ExistingFile);

  auto* gen_data = app.add_subcommand("gen-data", "synthesize datasets for this seed");
  auto* train = app.add_subcommand("train", "train the configured mechanism and stage");
  auto* attack = app.add_subcommand("attack", "run gradient attacks against the checkpoint");
  auto* eval_static = app.add_subcommand("eval-static", "static injection success rates");
  auto* eval_gcg = app.add_subcommand("eval-gcg", "aggregate attack traces into a report");
  auto* eval_sep = app.add_subcommand("eval-sep", "separation scores and utility proxy");
  auto* report = app.add_subcommand("report", "merge all reports into one CSV on stdout");

  CLI11_PARSE(app, argc, argv);

  airlab_workbench* wb = open_workbench(config_path);
  if (wb == nullptr) return 1;

  int ok = 0;
  if (gen_data->parsed()) {
    ok = finish(wb, airlab_gen_data(wb));
  } else if (train->parsed()) {
    ok = finish(wb, airlab_train(wb));
  } else if (attack->parsed()) {
    int successes = 0, examples = 0;
    const airlab_status s = airlab_attack(wb, &successes, &examples);
    if (s == AIRLAB_OK) std::printf("attack: %d/%d succeeded\n", successes, examples);
    ok = finish(wb, s);
  } else if (eval_static->parsed()) {
    ok = finish(wb, airlab_eval_static(wb));
  } else if (eval_gcg->parsed()) {
    ok = finish(wb, airlab_eval_gcg(wb));
  } else if (eval_sep->parsed()) {
    ok = finish(wb, airlab_eval_sep(wb));
  } else if (report->parsed()) {
    std::string csv;
    const airlab_status s = fetch(wb, airlab_report, &csv);
    if (s == AIRLAB_OK) std::fputs(csv.c_str(), stdout);
    ok = finish(wb, s);
  }
  return ok ? 0 : 1;
}
