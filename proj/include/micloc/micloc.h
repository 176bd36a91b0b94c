/*
 * micloc C API: microphone-array source localization by conventional
 * beamforming, DAMAS deconvolution and a convolutional network.
 *
 * Every object is an opaque handle created by a create or load call and
 * released with the matching micloc_..._free. Functions return a micloc_status; on
 * failure micloc_last_error() describes the problem (thread-local, valid
 * until the next failing call on the same thread). Output pointers are left
 * untouched on failure.
 *
 * Angles are radians, distances meters, frequencies Hz.
 */
#ifndef MICLOC_H
#define MICLOC_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(MICLOC_BUILDING)
#    define MICLOC_API __declspec(dllexport)
#  else
#    define MICLOC_API __declspec(dllimport)
#  endif
#else
#  define MICLOC_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum micloc_status {
    MICLOC_OK = 0,
    MICLOC_ERR_INVALID_ARGUMENT = 1,
    MICLOC_ERR_DIMENSION_MISMATCH = 2,
    MICLOC_ERR_SINGULAR_GEOMETRY = 3,
    MICLOC_ERR_INSUFFICIENT_DATA = 4,
    MICLOC_ERR_STATE = 5,
    MICLOC_ERR_IO = 6,
    MICLOC_ERR_FILE_NOT_FOUND = 7,
    MICLOC_ERR_FORMAT = 8,
    MICLOC_ERR_OUT_OF_RANGE = 9,
    MICLOC_ERR_NULL_ARGUMENT = 10,
    MICLOC_ERR_BUFFER_TOO_SMALL = 11,
    MICLOC_ERR_INTERNAL = 99
} micloc_status;

MICLOC_API const char* micloc_version(void);
MICLOC_API const char* micloc_status_name(micloc_status status);
MICLOC_API const char* micloc_last_error(void);

typedef struct micloc_array micloc_array;
typedef struct micloc_grid micloc_grid;
typedef struct micloc_csm micloc_csm;
typedef struct micloc_propagation micloc_propagation;
typedef struct micloc_dataset micloc_dataset;
typedef struct micloc_network micloc_network;
typedef struct micloc_evaluation micloc_evaluation;

/* ---- geometry ---------------------------------------------------------- */

/* Plain text, one "x y z" per line, '#' starts a comment. */
MICLOC_API micloc_status micloc_array_load(const char* path, micloc_array** out);
/* xyz holds m consecutive (x, y, z) triples. */
MICLOC_API micloc_status micloc_array_create(const double* xyz, size_t m, micloc_array** out);
MICLOC_API void micloc_array_free(micloc_array* array);
MICLOC_API size_t micloc_array_size(const micloc_array* array);
MICLOC_API micloc_status micloc_array_diameter(const micloc_array* array, double* out);

MICLOC_API micloc_status micloc_grid_create(double z0, double alpha, size_t n, micloc_grid** out);
MICLOC_API void micloc_grid_free(micloc_grid* grid);
MICLOC_API size_t micloc_grid_size(const micloc_grid* grid);
MICLOC_API size_t micloc_grid_n(const micloc_grid* grid);
MICLOC_API double micloc_grid_side_length(const micloc_grid* grid);
MICLOC_API double micloc_grid_spacing(const micloc_grid* grid);
MICLOC_API micloc_status micloc_grid_point(const micloc_grid* grid, size_t index, double xyz[3]);

/* re_im receives 2*M doubles (re, im) per microphone. */
MICLOC_API micloc_status micloc_steering_vector(const micloc_array* array, const double focus[3], double f, double c0,
                                                double* re_im, size_t len);
MICLOC_API micloc_status micloc_rayleigh_resolution(double diameter, double z, double f, double alpha, double c,
                                                    double* out);

/* ---- cross-spectral matrices ------------------------------------------- */

typedef enum micloc_csm_encoding { MICLOC_CSM_HEX = 0, MICLOC_CSM_JSON = 1 } micloc_csm_encoding;
typedef enum micloc_window { MICLOC_WINDOW_RECTANGULAR = 0, MICLOC_WINDOW_HANN = 1 } micloc_window;

/* powers holds S = grid size nonnegative source powers. */
MICLOC_API micloc_status micloc_csm_synthesize(const micloc_array* array, const micloc_grid* grid, const double* powers,
                                               size_t s, double f, double c0, micloc_csm** out);
/* re_im holds M*M row-major complex entries as (re, im) pairs. */
MICLOC_API micloc_status micloc_csm_from_entries(const double* re_im, size_t m, double f, micloc_csm** out);
/* signals is channel-major: m rows of `samples` values each. */
MICLOC_API micloc_status micloc_csm_from_snapshots(const double* signals, size_t m, size_t samples, double sample_rate,
                                                   size_t frame_len, size_t n_frames, micloc_window window,
                                                   double bin_freq, micloc_csm** out);
MICLOC_API void micloc_csm_free(micloc_csm* csm);
/* In place. snr_db = +INFINITY leaves the matrix unchanged. */
MICLOC_API micloc_status micloc_csm_add_noise(micloc_csm* csm, double snr_db);
MICLOC_API micloc_status micloc_csm_remove_diagonal(micloc_csm* csm);
MICLOC_API size_t micloc_csm_size(const micloc_csm* csm);
MICLOC_API double micloc_csm_frequency(const micloc_csm* csm);
MICLOC_API micloc_status micloc_csm_trace(const micloc_csm* csm, double* out);
MICLOC_API micloc_status micloc_csm_entries(const micloc_csm* csm, double* re_im, size_t len);
MICLOC_API micloc_status micloc_csm_load(const char* path, micloc_csm** out);
MICLOC_API micloc_status micloc_csm_save(const micloc_csm* csm, const char* path, micloc_csm_encoding encoding);

/* ---- beamforming ------------------------------------------------------- */

MICLOC_API micloc_status micloc_das_map(const micloc_csm* csm, const micloc_array* array, const micloc_grid* grid,
                                        double c0, int diagonal_removal, double* out, size_t s);
MICLOC_API micloc_status micloc_psf_column(const micloc_array* array, const micloc_grid* grid, double f, double c0,
                                           size_t source_index, double* out, size_t s);
/* Indices of the k largest values (ties to the lower index), ascending. */
MICLOC_API micloc_status micloc_top_k(const double* values, size_t n, size_t k, size_t* out);
/* Grid points whose value is >= every 8-neighbour, > all neighbours that
   precede them in index order, and >= rel_threshold * global maximum. */
MICLOC_API micloc_status micloc_count_local_maxima(const micloc_grid* grid, const double* values, size_t s,
                                                   double rel_threshold, size_t* count);

MICLOC_API micloc_status micloc_map_save_csv(const micloc_grid* grid, const double* values, size_t s, const char* path);
MICLOC_API micloc_status micloc_map_save_pgm(const micloc_grid* grid, const double* values, size_t s, const char* path);
/* Writes up to cap values; *len receives the number of rows in the file. */
MICLOC_API micloc_status micloc_map_load_csv(const char* path, double* values, size_t cap, size_t* len);

/* ---- DAMAS ------------------------------------------------------------- */

typedef enum micloc_sweep { MICLOC_SWEEP_FORWARD = 0, MICLOC_SWEEP_ALTERNATING = 1 } micloc_sweep;

typedef struct micloc_residual {
    size_t iteration;
    double residual; /* |A x - b|_2 */
} micloc_residual;

MICLOC_API micloc_status micloc_propagation_build(const micloc_array* array, const micloc_grid* grid, double f,
                                                  double c0, micloc_propagation** out);
MICLOC_API micloc_status micloc_propagation_load(const char* path, micloc_propagation** out);
MICLOC_API micloc_status micloc_propagation_save(const micloc_propagation* a, const char* path);
MICLOC_API void micloc_propagation_free(micloc_propagation* a);
MICLOC_API size_t micloc_propagation_size(const micloc_propagation* a);
/* *matches = 1 when the matrix was built for exactly this configuration. */
MICLOC_API micloc_status micloc_propagation_matches(const micloc_propagation* a, const micloc_array* array,
                                                    const micloc_grid* grid, double f, double c0, int* matches);
/* Solves from x = 0. history may be NULL; otherwise up to history_cap
   samples are written and *history_len receives the full count. */
MICLOC_API micloc_status micloc_damas_solve(const micloc_propagation* a, const double* dirty_map, size_t s,
                                            size_t iterations, micloc_sweep sweep, double* solution,
                                            micloc_residual* history, size_t history_cap, size_t* history_len);

/* ---- datasets ---------------------------------------------------------- */

typedef enum micloc_split { MICLOC_SPLIT_TRAIN = 0, MICLOC_SPLIT_VALIDATION = 1, MICLOC_SPLIT_TEST = 2 } micloc_split;

typedef struct micloc_dataset_config {
    double frequency;
    double c0;
    double snr_db; /* +INFINITY for noiseless inputs */
    size_t count;
    size_t k;
    uint64_t seed;
    int stochastic_noise;
    size_t snapshot_frames;
} micloc_dataset_config;

typedef struct micloc_dataset_info {
    size_t count, m, s, k, in_channels;
    size_t train, validation, test;
    double frequency, c0, snr_db;
    uint64_t seed;
} micloc_dataset_info;

MICLOC_API void micloc_dataset_config_default(micloc_dataset_config* config);
/* k distinct grid indices drawn uniformly from a stream seeded with seed. */
MICLOC_API micloc_status micloc_sample_scenario(const micloc_grid* grid, size_t k, uint64_t seed, size_t* indices);
MICLOC_API micloc_status micloc_dataset_generate(const micloc_array* array, const micloc_grid* grid,
                                                 const micloc_dataset_config* config, micloc_dataset** out);
MICLOC_API micloc_status micloc_dataset_load(const char* path, micloc_dataset** out);
MICLOC_API micloc_status micloc_dataset_save(const micloc_dataset* ds, const char* path);
MICLOC_API void micloc_dataset_free(micloc_dataset* ds);
MICLOC_API micloc_status micloc_dataset_info_get(const micloc_dataset* ds, micloc_dataset_info* info);

/* ---- network ----------------------------------------------------------- */

typedef struct micloc_epoch {
    size_t epoch;
    double train_loss;
    double validation_loss;
} micloc_epoch;

typedef void (*micloc_epoch_callback)(const micloc_epoch* epoch, void* user);

typedef struct micloc_train_config {
    size_t epochs;
    size_t batch_size;
    uint64_t seed;
    double learning_rate;
    double beta1;
    micloc_epoch_callback on_epoch; /* may be NULL */
    void* user;
} micloc_train_config;

MICLOC_API micloc_status micloc_network_create(size_t m, size_t s, size_t in_channels, uint64_t seed,
                                               micloc_network** out);
MICLOC_API micloc_status micloc_network_load(const char* path, micloc_network** out);
MICLOC_API micloc_status micloc_network_save(const micloc_network* net, const char* path);
MICLOC_API void micloc_network_free(micloc_network* net);
MICLOC_API size_t micloc_network_parameter_count(const micloc_network* net);
MICLOC_API micloc_status micloc_network_shape(const micloc_network* net, size_t* m, size_t* s, size_t* in_channels);
/* input holds count samples of M*M*C floats; out receives count*S floats. */
MICLOC_API micloc_status micloc_network_predict(micloc_network* net, const float* input, size_t count, float* out,
                                                size_t out_len);
/* Runs the network on a CSM (real/imaginary channels). */
MICLOC_API micloc_status micloc_network_predict_csm(micloc_network* net, const micloc_csm* csm, float* out, size_t s);

MICLOC_API void micloc_train_config_default(micloc_train_config* config);
/* history may be NULL; otherwise receives up to history_cap epochs. */
MICLOC_API micloc_status micloc_network_train(micloc_network* net, const micloc_dataset* ds,
                                              const micloc_train_config* config, micloc_epoch* history,
                                              size_t history_cap, double* initial_train_loss,
                                              double* initial_validation_loss);

/* ---- evaluation -------------------------------------------------------- */

typedef struct micloc_eval_summary {
    double accuracy;
    size_t correct, total;
    size_t failures, boundary_failures, adjacent_failures, boundary_and_adjacent_failures, other_failures;
    double seconds_per_sample;
} micloc_eval_summary;

/* Top-k exact-set accuracy of the network on the dataset's test split. */
MICLOC_API micloc_status micloc_evaluate(micloc_network* net, const micloc_dataset* ds, size_t k,
                                         micloc_evaluation** out);
/* Test hook: a predictor that returns the true label for every sample. */
MICLOC_API micloc_status micloc_evaluate_oracle(const micloc_dataset* ds, size_t k, micloc_evaluation** out);
MICLOC_API void micloc_evaluation_free(micloc_evaluation* ev);
MICLOC_API micloc_status micloc_evaluation_summary(const micloc_evaluation* ev, micloc_eval_summary* out);
/* truth and predicted receive k ascending indices each. */
MICLOC_API micloc_status micloc_evaluation_record(const micloc_evaluation* ev, size_t i, size_t* truth,
                                                  size_t* predicted, int* correct, int* boundary, int* adjacent);

#ifdef __cplusplus
}
#endif

#endif /* MICLOC_H */
