#ifndef ECGR_H
#define ECGR_H

#include <stddef.h>
#include <stdint.h>

#if defined(ECGR_BUILDING_LIBRARY)
#define ECGR_API __attribute__((visibility("default")))
#else
#define ECGR_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ecgr_status {
    ECGR_OK = 0,
    ECGR_E_ARGUMENT = 1,   /* bad argument, NULL handle, unknown option */
    ECGR_E_IO = 2,         /* file could not be read or written */
    ECGR_E_FORMAT = 3,     /* malformed file, config or model */
    ECGR_E_PARSE = 4,      /* malformed line in a text file */
    ECGR_E_EVIDENCE = 5,   /* too little signal to analyse */
    ECGR_E_DEGENERATE = 6, /* training data unusable (one class, too few rows) */
    ECGR_E_SHAPE = 7,      /* dimension mismatch */
    ECGR_E_NUMERIC = 8,    /* singular covariance and similar */
    ECGR_E_INTERNAL = 9
} ecgr_status;

typedef struct ecgr_config ecgr_config;
typedef struct ecgr_record ecgr_record;
typedef struct ecgr_interpretation ecgr_interpretation;
typedef struct ecgr_bundle ecgr_bundle;

typedef void (*ecgr_log_fn)(const char* message, void* user);

ECGR_API const char* ecgr_version(void);
ECGR_API const char* ecgr_status_name(ecgr_status s);
/* Message of the last failed call on this thread; "" if none. */
ECGR_API const char* ecgr_last_error(void);
/* Releases strings returned through char** out parameters. */
ECGR_API void ecgr_free(void* p);
/* Progress messages from train / cv. NULL disables. */
ECGR_API void ecgr_set_log_callback(ecgr_log_fn fn, void* user);

/* ---- configuration ---- */
ECGR_API ecgr_status ecgr_config_create(ecgr_config** out);
ECGR_API ecgr_status ecgr_config_load(const char* path, ecgr_config** out);
/* key is dotted ("gbt.eta", "seed"); value is JSON ("0.3", "\"nested\""). */
ECGR_API ecgr_status ecgr_config_set(ecgr_config* c, const char* key, const char* json_value);
ECGR_API ecgr_status ecgr_config_set_seed(ecgr_config* c, uint64_t seed);
ECGR_API ecgr_status ecgr_config_set_jobs(ecgr_config* c, int jobs);
ECGR_API ecgr_status ecgr_config_to_json(const ecgr_config* c, char** out);
ECGR_API ecgr_status ecgr_config_hash(const ecgr_config* c, char** out);
ECGR_API void ecgr_config_free(ecgr_config* c);

/* ---- records ---- */
ECGR_API ecgr_status ecgr_record_load(const char* path, ecgr_record** out);
/* label is one of 'N', 'A', 'O', '~'. */
ECGR_API ecgr_status ecgr_record_synth(char label, uint64_t seed, double duration_s, ecgr_record** out);
ECGR_API ecgr_status ecgr_record_write(const ecgr_record* r, const char* path);
ECGR_API ecgr_status ecgr_record_info(const ecgr_record* r, int* fs, size_t* n_samples);
/* Copies min(capacity, n_samples) samples in mV. */
ECGR_API ecgr_status ecgr_record_samples(const ecgr_record* r, double* out, size_t capacity);
ECGR_API void ecgr_record_free(ecgr_record* r);

/* ---- interpretation ---- */
/* Resamples, filters and interprets one record. bundle may be NULL; when
   given, its inversion detector and configuration are used. */
ECGR_API ecgr_status ecgr_interpret(const ecgr_config* c, const ecgr_bundle* bundle, const ecgr_record* r,
                                    ecgr_interpretation** out);
ECGR_API ecgr_status ecgr_interpretation_json(const ecgr_interpretation* itp, char** out);
ECGR_API ecgr_status ecgr_interpretation_annotations(const ecgr_interpretation* itp, char** out);
ECGR_API ecgr_status ecgr_interpretation_svg(const ecgr_interpretation* itp, char** out);
ECGR_API ecgr_status ecgr_interpretation_summary(const ecgr_interpretation* itp, size_t* n_beats,
                                                 size_t* n_episodes, int* deleted, int* inserted,
                                                 int* inverted);
ECGR_API void ecgr_interpretation_free(ecgr_interpretation* itp);

/* SVG for an interpretation JSON file over a record file. The record is
   prepared the same way as in ecgr_interpret; pass inverted != 0 if the
   interpretation was made on the negated signal. */
ECGR_API ecgr_status ecgr_render(const char* interpretation_json_path, const char* record_path, int inverted,
                                 char** svg_out);

/* ---- batch operations ---- */
ECGR_API ecgr_status ecgr_synth_corpus(const ecgr_config* c, const char* out_dir, int per_class,
                                       char** manifest_path);
/* Either CSV path may be NULL. bundle may be NULL (no inversion check). */
ECGR_API ecgr_status ecgr_extract_features(const ecgr_config* c, const ecgr_bundle* bundle, const char* manifest,
                                           const char* global_csv, const char* beats_csv);
ECGR_API ecgr_status ecgr_train(const ecgr_config* c, const char* manifest, const char* bundle_dir);
ECGR_API ecgr_status ecgr_bundle_load(const char* dir, ecgr_bundle** out);
ECGR_API ecgr_status ecgr_bundle_config_hash(const ecgr_bundle* b, char** out);
ECGR_API void ecgr_bundle_free(ecgr_bundle* b);
/* Writes "record_id,label" rows in manifest order. Only the jobs setting of
   c is used; c may be NULL. */
ECGR_API ecgr_status ecgr_classify(const ecgr_bundle* b, const ecgr_config* c, const char* manifest,
                                   const char* answers_path);
ECGR_API ecgr_status ecgr_classify_record(const ecgr_bundle* b, const ecgr_record* r, char* label,
                                          double probs[4]);
/* means: gbt, rnn, stacker. Either path may be NULL; means may be NULL.
   csv_path "-" writes the CSV report to stdout. */
ECGR_API ecgr_status ecgr_cv(const ecgr_config* c, const char* manifest, const char* csv_path,
                             const char* json_path, double means[3]);
/* f1 in N, A, O, ~ order; either output may be NULL. */
ECGR_API ecgr_status ecgr_score(const char* answers, const char* reference, double f1[4], double* final_score);

#ifdef __cplusplus
}
#endif

#endif
