#include "pairdiff.h"

#include <string>
#include <vector>

#include "pairdiff/common.hpp"
#include "pairdiff/experiment.hpp"

struct pd_experiment {
  pairdiff::experiment::ExperimentConfig cfg;
  std::string echo;
};

namespace {

thread_local std::string g_last_error;

template <typename Fn>
pd_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return PD_OK;
  } catch (const pairdiff::MissingArtifactError& e) {
    g_last_error = e.what();
    return PD_ERR_MISSING_ARTIFACT;
  } catch (const pairdiff::NumericError& e) {
    g_last_error = e.what();
    return PD_ERR_NUMERIC;
  } catch (const pairdiff::ConfigError& e) {
    g_last_error = e.what();
    return PD_ERR_CONFIG;
  } catch (const pairdiff::ShapeError& e) {
    g_last_error = e.what();
    return PD_ERR_CONFIG;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return PD_ERR_FAILURE;
  } catch (...) {
    g_last_error = "unknown error";
    return PD_ERR_FAILURE;
  }
}

std::vector<std::string> collect(const char* const* overrides, size_t n) {
  if (n > 0 && overrides == nullptr)
    throw pairdiff::ConfigError("overrides pointer is null with n_overrides > 0");
  std::vector<std::string> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    if (overrides[i] == nullptr) throw pairdiff::ConfigError("override entry is null");
    out.emplace_back(overrides[i]);
  }
  return out;
}

}  // namespace

extern "C" {

const char* pd_version(void) { return "0.1.0"; }

const char* pd_status_name(pd_status s) {
  switch (s) {
    case PD_OK: return "ok";
    case PD_ERR_FAILURE: return "failure";
    case PD_ERR_CONFIG: return "config error";
    case PD_ERR_MISSING_ARTIFACT: return "missing artifact";
    case PD_ERR_NUMERIC: return "numeric failure";
  }
  return "unknown";
}

const char* pd_last_error(void) { return g_last_error.c_str(); }

size_t pd_subcommand_count(void) { return pairdiff::experiment::subcommand_names().size(); }

const char* pd_subcommand_name(size_t i) {
  const auto& names = pairdiff::experiment::subcommand_names();
  return i < names.size() ? names[i].c_str() : nullptr;
}

pd_status pd_experiment_open(const char* config_path, const char* const* overrides,
                             size_t n_overrides, pd_experiment** out) {
  if (out == nullptr) {
    g_last_error = "out pointer is null";
    return PD_ERR_CONFIG;
  }
  *out = nullptr;
  return guarded([&] {
    const std::vector<std::string> ov = collect(overrides, n_overrides);
    pairdiff::experiment::ExperimentConfig cfg;
    if (config_path != nullptr) {
      cfg = pairdiff::experiment::load_experiment_config(config_path, ov);
    } else {
      std::string text;
      for (const auto& line : ov) {
        text += line;
        text += '\n';
      }
      cfg = pairdiff::experiment::parse_experiment_config(text);
    }
    auto* handle = new pd_experiment;
    handle->cfg = std::move(cfg);
    handle->echo = handle->cfg.echo();
    *out = handle;
  });
}

void pd_experiment_close(pd_experiment* exp) { delete exp; }

const char* pd_experiment_config(const pd_experiment* exp) {
  return exp != nullptr ? exp->echo.c_str() : nullptr;
}

pd_status pd_experiment_run(pd_experiment* exp, const char* subcommand) {
  return guarded([&] {
    if (exp == nullptr) throw pairdiff::ConfigError("experiment handle is null");
    if (subcommand == nullptr) throw pairdiff::ConfigError("subcommand is null");
    pairdiff::experiment::run_subcommand(subcommand, exp->cfg);
  });
}

pd_status pd_run(const char* subcommand, const char* config_path, const char* const* overrides,
                 size_t n_overrides) {
  pd_experiment* exp = nullptr;
  const pd_status st = pd_experiment_open(config_path, overrides, n_overrides, &exp);
  if (st != PD_OK) return st;
  const pd_status run_st = pd_experiment_run(exp, subcommand);
  pd_experiment_close(exp);
  return run_st;
}

}  // extern "C"
