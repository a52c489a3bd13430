#include "airlab.h"

#include <cstring>
#include <exception>
#include <fstream>
#include <new>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

#include "airlab/workbench.hpp"

struct airlab_workbench {
  airlab::Workbench wb;
  std::string last_error;
  std::string buffer;

  explicit airlab_workbench(airlab::RunConfig cfg) : wb(std::move(cfg)) {}
};

namespace {

void copy_message(const std::string& msg, char* buf, size_t cap) {
  if (buf == nullptr || cap == 0) return;
  const size_t n = msg.size() < cap - 1 ? msg.size() : cap - 1;
  std::memcpy(buf, msg.data(), n);
  buf[n] = '\0';
}

airlab_status status_for(const std::exception& e) {
  if (dynamic_cast<const airlab::MissingArtifactError*>(&e) != nullptr) return AIRLAB_ERR_STATE;
  if (dynamic_cast<const std::invalid_argument*>(&e) != nullptr) return AIRLAB_ERR_INVALID_ARGUMENT;
  if (dynamic_cast<const std::runtime_error*>(&e) != nullptr) return AIRLAB_ERR_IO;
  return AIRLAB_ERR_INTERNAL;
}

// Runs one command, capturing the failure message on the handle.
template <typename Fn>
airlab_status run_command(airlab_workbench* wb, Fn&& fn) {
  if (wb == nullptr) return AIRLAB_ERR_INVALID_ARGUMENT;
  wb->last_error.clear();
  try {
    fn();
    return AIRLAB_OK;
  } catch (const std::exception& e) {
    wb->last_error = e.what();
    return status_for(e);
  } catch (...) {
    wb->last_error = "unknown error";
    return AIRLAB_ERR_INTERNAL;
  }
}

// Two-call buffer protocol shared by config/report accessors.
airlab_status copy_out(const std::string& text, char* buf, size_t cap, size_t* needed) {
  if (needed != nullptr) *needed = text.size() + 1;
  copy_message(text, buf, cap);
  return AIRLAB_OK;
}

airlab_status open_config(airlab::RunConfig cfg, airlab_workbench** out, char* errbuf,
                          size_t errcap) {
  *out = new (std::nothrow) airlab_workbench(std::move(cfg));
  if (*out == nullptr) {
    copy_message("out of memory", errbuf, errcap);
    return AIRLAB_ERR_INTERNAL;
  }
  return AIRLAB_OK;
}

}  // namespace

extern "C" {

const char* airlab_version(void) { return "0.1.0"; }

airlab_status airlab_open_json(const char* config_json, airlab_workbench** out, char* errbuf,
                               size_t errcap) {
  if (out == nullptr) return AIRLAB_ERR_INVALID_ARGUMENT;
  *out = nullptr;
  if (config_json == nullptr) {
    copy_message("config_json is null", errbuf, errcap);
    return AIRLAB_ERR_INVALID_ARGUMENT;
  }
  try {
    return open_config(airlab::run_config_from_json(config_json), out, errbuf, errcap);
  } catch (const std::exception& e) {
    copy_message(e.what(), errbuf, errcap);
    return AIRLAB_ERR_CONFIG;
  }
}

airlab_status airlab_open_file(const char* config_path, airlab_workbench** out, char* errbuf,
                               size_t errcap) {
  if (out == nullptr) return AIRLAB_ERR_INVALID_ARGUMENT;
  *out = nullptr;
  if (config_path == nullptr) {
    copy_message("config_path is null", errbuf, errcap);
    return AIRLAB_ERR_INVALID_ARGUMENT;
  }
  try {
    return open_config(airlab::run_config_from_file(config_path), out, errbuf, errcap);
  } catch (const std::exception& e) {
    copy_message(e.what(), errbuf, errcap);
    return AIRLAB_ERR_CONFIG;
  }
}

void airlab_close(airlab_workbench* wb) { delete wb; }

const char* airlab_last_error(const airlab_workbench* wb) {
  if (wb == nullptr) return "";
  return wb->last_error.c_str();
}

airlab_status airlab_config_json(airlab_workbench* wb, char* buf, size_t cap, size_t* needed) {
  return run_command(wb, [&] {
    wb->buffer = airlab::run_config_to_json(wb->wb.config());
    copy_out(wb->buffer, buf, cap, needed);
  });
}

airlab_status airlab_gen_data(airlab_workbench* wb) {
  return run_command(wb, [&] { wb->wb.gen_data(); });
}

airlab_status airlab_train(airlab_workbench* wb) {
  return run_command(wb, [&] { wb->wb.train(); });
}

airlab_status airlab_attack(airlab_workbench* wb, int* successes, int* examples) {
  return run_command(wb, [&] {
    const airlab::AttackCommandResult r = wb->wb.attack();
    if (successes != nullptr) *successes = r.successes;
    if (examples != nullptr) *examples = r.examples;
  });
}

airlab_status airlab_eval_static(airlab_workbench* wb) {
  return run_command(wb, [&] { wb->wb.eval_static(); });
}

airlab_status airlab_eval_gcg(airlab_workbench* wb) {
  return run_command(wb, [&] { wb->wb.eval_gcg(); });
}

airlab_status airlab_eval_sep(airlab_workbench* wb) {
  return run_command(wb, [&] { wb->wb.eval_sep(); });
}

airlab_status airlab_report(airlab_workbench* wb, char* buf, size_t cap, size_t* needed) {
  return run_command(wb, [&] {
    wb->buffer = wb->wb.report();
    copy_out(wb->buffer, buf, cap, needed);
  });
}

int64_t airlab_count_ih_params(const char* mechanism, int layers, int levels, int width) {
  if (mechanism == nullptr || layers <= 0 || levels <= 0 || width <= 0) return -1;
  try {
    airlab::DecoderConfig cfg;
    cfg.mechanism = airlab::mechanism_from_name(mechanism);
    cfg.layers = layers;
    cfg.levels = levels;
    cfg.width = width;
    return airlab::count_ih_params(cfg);
  } catch (const std::exception&) {
    return -1;
  }
}

}  // extern "C"
