#ifndef PAIRDIFF_H
#define PAIRDIFF_H

/* C interface to the pairdiff pipeline. All functions return a pd_status;
 * anything but PD_OK leaves a message in pd_last_error() (per thread). The
 * status values double as process exit codes for the CLI. */

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum pd_status {
  PD_OK = 0,
  PD_ERR_FAILURE = 1,          /* anything not covered below */
  PD_ERR_CONFIG = 2,           /* bad config value, key, shape, or argument */
  PD_ERR_MISSING_ARTIFACT = 3, /* an upstream stage has not produced its file */
  PD_ERR_NUMERIC = 4           /* non-finite loss, diverged optimization, ... */
} pd_status;

const char* pd_version(void);
const char* pd_status_name(pd_status s);

/* Message from the most recent failing call on the calling thread; an empty
 * string when the last call succeeded. The buffer is owned by the library
 * and overwritten by the next call on the same thread. */
const char* pd_last_error(void);

/* Number of pipeline subcommands and the name at an index (NULL if out of
 * range): gen-data, train-diff, sample, train-sr, superres, build-augset,
 * train-seg, eval, ratio-sweep, ablate, report. */
size_t pd_subcommand_count(void);
const char* pd_subcommand_name(size_t i);

typedef struct pd_experiment pd_experiment;

/* Builds an experiment context from a config file plus key=value override
 * lines (applied on top, last wins). config_path may be NULL to start from
 * built-in defaults; out_dir must be set by the file or an override. On
 * success *out owns the context until pd_experiment_close. */
pd_status pd_experiment_open(const char* config_path, const char* const* overrides,
                             size_t n_overrides, pd_experiment** out);
void pd_experiment_close(pd_experiment* exp);

/* Canonical key=value echo of the loaded config; owned by the handle. */
const char* pd_experiment_config(const pd_experiment* exp);

/* Runs one pipeline subcommand against the config's out_dir. */
pd_status pd_experiment_run(pd_experiment* exp, const char* subcommand);

/* One-shot convenience: open, run, close. */
pd_status pd_run(const char* subcommand, const char* config_path,
                 const char* const* overrides, size_t n_overrides);

#ifdef __cplusplus
}
#endif

#endif /* PAIRDIFF_H */
