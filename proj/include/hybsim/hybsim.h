#ifndef HYBSIM_HYBSIM_H
#define HYBSIM_HYBSIM_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define HYBSIM_API __declspec(dllexport)
#else
#define HYBSIM_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum hybsim_status {
    HYBSIM_OK = 0,
    HYBSIM_ERR_CONFIG = 1,   /* scenario text or parameter rejected */
    HYBSIM_ERR_IO = 2,       /* file could not be read or written */
    HYBSIM_ERR_RUNTIME = 3,  /* a simulation failed */
    HYBSIM_ERR_ARGUMENT = 4  /* null handle, index out of range, empty table */
} hybsim_status;

typedef struct hybsim_scenario hybsim_scenario;
typedef struct hybsim_results hybsim_results;

typedef struct hybsim_run_options {
    int has_seed;        /* nonzero: use seed instead of the scenario's */
    uint64_t seed;
    unsigned parallel;   /* worker threads; 0 is treated as 1 */
    int trace;           /* record packet traces */
    int conn_log;        /* record connection events */
} hybsim_run_options;

typedef struct hybsim_row {
    double sweep_value;
    uint64_t seed;
    double dsl_mbps;
    double lte_mbps;
    double aggregate_mbps;
    double lte_share;
    uint64_t retx;
    uint64_t reorder_releases;
    double completion_s; /* NaN when a transfer did not finish */
    double dsl_mbps_full;
    double lte_mbps_full;
    double aggregate_mbps_full;
    uint64_t lte_bytes;
    uint64_t filter_drops;
    int corrupt;
} hybsim_row;

HYBSIM_API const char* hybsim_version(void);

/* Message of the last failed call on this thread; "" if none. */
HYBSIM_API const char* hybsim_last_error(void);

HYBSIM_API void hybsim_run_options_init(hybsim_run_options* opts);

/* `source` names the text in error messages and may be NULL. */
HYBSIM_API hybsim_status hybsim_scenario_parse(const char* text, size_t len, const char* source,
                                               hybsim_scenario** out);
HYBSIM_API hybsim_status hybsim_scenario_load(const char* path, hybsim_scenario** out);
HYBSIM_API hybsim_status hybsim_scenario_set(hybsim_scenario* s, const char* key, const char* value);
HYBSIM_API void hybsim_scenario_free(hybsim_scenario* s);

HYBSIM_API hybsim_status hybsim_run(const hybsim_scenario* s, const hybsim_run_options* opts,
                                    hybsim_results** out);

/* One table per series value, or a single table without a series. */
HYBSIM_API size_t hybsim_results_table_count(const hybsim_results* r);
/* Series parameter name of a table, or NULL; *value receives its value. */
HYBSIM_API const char* hybsim_results_series(const hybsim_results* r, size_t table, double* value);
HYBSIM_API size_t hybsim_results_row_count(const hybsim_results* r, size_t table);
HYBSIM_API hybsim_status hybsim_results_row(const hybsim_results* r, size_t table, size_t row, hybsim_row* out);
/* CSV text of a table; the string lives as long as the results handle. */
HYBSIM_API hybsim_status hybsim_results_csv(const hybsim_results* r, size_t table, const char** text);
HYBSIM_API hybsim_status hybsim_results_write_csv(const hybsim_results* r, size_t table, const char* path);
/* Writes the packet trace, or the connection log when conn_log is nonzero. */
HYBSIM_API hybsim_status hybsim_results_write_trace(const hybsim_results* r, const char* path, int conn_log);
HYBSIM_API void hybsim_results_free(hybsim_results* r);

#ifdef __cplusplus
}
#endif

#endif
