/* C interface to the injection-defense workbench. One opaque handle wraps a
 * run configuration; commands mirror the CLI subcommands and report failures
 * through status codes plus a per-handle error message. */
#ifndef AIRLAB_H_
#define AIRLAB_H_

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum airlab_status {
  AIRLAB_OK = 0,
  AIRLAB_ERR_CONFIG = 1,           /* config file unreadable or invalid */
  AIRLAB_ERR_INVALID_ARGUMENT = 2, /* bad argument to a command */
  AIRLAB_ERR_STATE = 3,            /* prerequisite artifact missing */
  AIRLAB_ERR_IO = 4,               /* filesystem or format failure */
  AIRLAB_ERR_INTERNAL = 5
} airlab_status;

typedef struct airlab_workbench airlab_workbench;

const char* airlab_version(void);

/* Opens a workbench from a JSON run config (text or file). AIRLAB_*
 * environment overrides apply. On failure *out is NULL and errbuf (when
 * non-NULL) receives a NUL-terminated message truncated to errcap. */
airlab_status airlab_open_json(const char* config_json, airlab_workbench** out, char* errbuf,
                               size_t errcap);
airlab_status airlab_open_file(const char* config_path, airlab_workbench** out, char* errbuf,
                               size_t errcap);
void airlab_close(airlab_workbench* wb);

/* Message for the most recent failed command on this handle; empty string
 * when the last command succeeded. Valid until the next command. */
const char* airlab_last_error(const airlab_workbench* wb);

/* Copies the resolved run config JSON into buf. *needed (when non-NULL)
 * receives the full size including the terminating NUL; the copy is
 * truncated to cap. */
airlab_status airlab_config_json(airlab_workbench* wb, char* buf, size_t cap, size_t* needed);

airlab_status airlab_gen_data(airlab_workbench* wb);
airlab_status airlab_train(airlab_workbench* wb);
/* successes/examples (when non-NULL) receive the attack tally. */
airlab_status airlab_attack(airlab_workbench* wb, int* successes, int* examples);
airlab_status airlab_eval_static(airlab_workbench* wb);
airlab_status airlab_eval_gcg(airlab_workbench* wb);
airlab_status airlab_eval_sep(airlab_workbench* wb);
/* Merged comparison CSV, same buffer convention as airlab_config_json. */
airlab_status airlab_report(airlab_workbench* wb, char* buf, size_t cap, size_t* needed);

/* Trainable parameters a privilege mechanism ("none", "delimiters", "ise",
 * "air") adds to a decoder with the given shape; -1 on bad arguments. */
int64_t airlab_count_ih_params(const char* mechanism, int layers, int levels, int width);

#ifdef __cplusplus
}
#endif

#endif /* AIRLAB_H_ */
