/* bevkit C API: camera/LiDAR BEV detection at desk scale.
 *
 * Every object is an opaque handle created by a *_new/_load/_generate call
 * and released with the matching *_free (NULL is accepted). Calls return a
 * bk_status; on failure bk_last_error() holds a message for the calling
 * thread until its next failing call. Output pointers are written only on
 * success. Strings returned through `const char**` stay valid while the
 * owning handle lives. */
#ifndef BEVKIT_H
#define BEVKIT_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define BK_API __declspec(dllexport)
#else
#define BK_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum bk_status {
  BK_OK = 0,
  BK_E_ARGUMENT = 1,       /* null handle, index out of range, bad enum */
  BK_E_DIMENSION = 2,      /* shape mismatch between inputs */
  BK_E_DOMAIN = 3,         /* value outside its valid range */
  BK_E_NUMERIC = 4,        /* non-finite value during computation */
  BK_E_CONTRACT = 5,       /* precondition violated */
  BK_E_PLACEMENT = 6,      /* scene generation ran out of attempts */
  BK_E_IO = 7,             /* write failure */
  BK_E_PARSE = 8,          /* malformed file or config */
  BK_E_MISSING_INPUT = 9,  /* input file absent */
  BK_E_PROPERTY = 10,      /* property or evaluation failure */
  BK_E_INTERNAL = 11
} bk_status;

BK_API const char* bk_status_name(bk_status s);
BK_API const char* bk_last_error(void);
/* Process exit code for a status: 0 ok, 2 missing input, 3 shape error,
 * 1 otherwise. */
BK_API int bk_exit_code(bk_status s);
BK_API const char* bk_version(void);

/* Worker threads for parallel kernels; BEVKIT_THREADS in the environment
 * takes precedence. */
BK_API void bk_set_threads(size_t n);
BK_API size_t bk_threads(void);

/* ----------------------------------------------------------------- config */

typedef struct bk_config bk_config;

BK_API bk_status bk_config_default(bk_config** out);
BK_API bk_status bk_config_load(const char* path, bk_config** out);
BK_API bk_status bk_config_parse(const char* text, bk_config** out);
/* Sets the single seed every random stream derives from. */
BK_API bk_status bk_config_set_seed(bk_config* c, uint64_t seed);
BK_API bk_status bk_config_seed(const bk_config* c, uint64_t* out);
/* Effective configuration as INI text; owned by the handle. */
BK_API bk_status bk_config_ini(const bk_config* c, const char** out);
BK_API void bk_config_free(bk_config* c);

/* --------------------------------------------------------------- manifest */

/* Records artifacts as they are written; bk_manifest_write checksums them
 * into <out_dir>/manifest.json. */
typedef struct bk_manifest bk_manifest;

BK_API bk_status bk_manifest_new(const char* subcommand, const char* config_path, uint64_t seed,
                                 const char* out_dir, bk_manifest** out);
/* Path relative to out_dir. */
BK_API bk_status bk_manifest_add(bk_manifest* m, const char* relative_path);
BK_API bk_status bk_manifest_add_timing(bk_manifest* m, const char* name, double seconds);
BK_API bk_status bk_manifest_count(const bk_manifest* m, size_t* out);
BK_API bk_status bk_manifest_write(const bk_manifest* m);
BK_API void bk_manifest_free(bk_manifest* m);

/* ------------------------------------------------------------------ scene */

typedef struct bk_box {
  size_t class_id;
  double center[3];
  double size[3]; /* length, width, height */
  double yaw;
  double velocity[2];
} bk_box;

typedef struct bk_detection {
  size_t class_id;
  double score;
  double center[3];
  double size[3];
  double yaw;
  double velocity[2];
} bk_detection;

/* Ground-truth boxes, sensor rig and simulated sensor frame. */
typedef struct bk_scene bk_scene;

/* Scene drawn from the config seed with the config's box count and rig. */
BK_API bk_status bk_scene_generate(const bk_config* c, bk_scene** out);
BK_API bk_status bk_scene_load(const char* dir, bk_scene** out);
/* Writes scene.csv, rig.ini, cloud.bkp and per-camera tensors; `record`
 * may be NULL. */
BK_API bk_status bk_scene_save(const bk_scene* s, const char* dir, bk_manifest* record);
BK_API bk_status bk_scene_box_count(const bk_scene* s, size_t* out);
BK_API bk_status bk_scene_box(const bk_scene* s, size_t i, bk_box* out);
BK_API bk_status bk_scene_camera_count(const bk_scene* s, size_t* out);
BK_API bk_status bk_scene_point_count(const bk_scene* s, size_t* out);
BK_API bk_status bk_scene_class_count(const bk_scene* s, size_t* out);
BK_API bk_status bk_scene_seed(const bk_scene* s, uint64_t* out);
BK_API void bk_scene_free(bk_scene* s);

/* ------------------------------------------------------------------ model */

typedef struct bk_model bk_model;

/* Untrained parameters for the config's model, seeded from the config. */
BK_API bk_status bk_model_init(const bk_config* c, bk_model** out);
BK_API bk_status bk_model_load(const char* path, bk_model** out);
BK_API bk_status bk_model_save(const bk_model* m, const char* path, bk_manifest* record);
BK_API bk_status bk_model_scalar_count(const bk_model* m, size_t* out);
BK_API bk_status bk_model_class_count(const bk_model* m, size_t* out);
BK_API void bk_model_free(bk_model* m);

/* -------------------------------------------------------------- inference */

typedef enum bk_bev_kind {
  BK_BEV_RAY = 0,
  BK_BEV_POINT = 1,
  BK_BEV_CAMERA = 2,
  BK_BEV_LIDAR = 3,
  BK_BEV_FUSED = 4
} bk_bev_kind;

typedef struct bk_result bk_result;

/* LiDAR branch, both camera streams, fusion and the predictor. With
 * `oracle_heatmap` nonzero the candidates come from the ground-truth cells
 * and detections sit at their cell centres. */
BK_API bk_status bk_run(const bk_model* m, const bk_scene* s, int oracle_heatmap, bk_result** out);
BK_API bk_status bk_result_detection_count(const bk_result* r, size_t* out);
BK_API bk_status bk_result_detection(const bk_result* r, size_t i, bk_detection* out);
/* BEV tensor shape {n, n, channels} and the number of cells with any
 * nonzero channel. */
BK_API bk_status bk_result_bev_shape(const bk_result* r, bk_bev_kind kind, size_t shape[3]);
BK_API bk_status bk_result_bev_nonzero(const bk_result* r, bk_bev_kind kind, size_t* out);
BK_API bk_status bk_result_save_detections(const bk_result* r, const char* path, bk_manifest* record);
/* 16-bit PGM of per-cell feature norms. */
BK_API bk_status bk_result_save_bev(const bk_result* r, bk_bev_kind kind, const char* path,
                                    bk_manifest* record);
BK_API const char* bk_bev_kind_name(bk_bev_kind kind);
BK_API void bk_result_free(bk_result* r);

/* --------------------------------------------------------------- training */

typedef struct bk_report bk_report;

/* Depth pretraining then joint training on scenes drawn from the config;
 * evaluates on held-out scenes. */
BK_API bk_status bk_train(const bk_config* c, bk_report** out);
BK_API bk_status bk_report_steps(const bk_report* r, size_t* out);
BK_API bk_status bk_report_loss(const bk_report* r, size_t step, double* out);
BK_API bk_status bk_report_eval(const bk_report* r, double* map, double* nds);
BK_API bk_status bk_report_wall_seconds(const bk_report* r, double* out);
/* Trained parameters as a new model handle. */
BK_API bk_status bk_report_model(const bk_report* r, bk_model** out);
/* run.json and loss_curve.csv. */
BK_API bk_status bk_report_save(const bk_report* r, const char* dir, bk_manifest* record);
BK_API void bk_report_free(bk_report* r);

typedef struct bk_ablation bk_ablation;

typedef struct bk_ablation_row {
  const char* name;
  const char* dual_stream;
  int task_specific;
  double mean_map;
  double mean_nds;
  double mean_final_loss;
} bk_ablation_row;

typedef void (*bk_ablation_progress)(const char* setting, uint64_t seed, double map, void* user);

/* The six-setting grid on the config's ablation seeds. */
BK_API bk_status bk_ablate(const bk_config* c, bk_ablation_progress progress, void* user,
                           bk_ablation** out);
BK_API bk_status bk_ablation_row_count(const bk_ablation* a, size_t* out);
BK_API bk_status bk_ablation_get_row(const bk_ablation* a, size_t i, bk_ablation_row* out);
/* Whether the full model beats each single module and each beats the
 * baseline in mean held-out mAP; `detail` may be NULL. */
BK_API bk_status bk_ablation_ordering(const bk_ablation* a, int* holds, const char** detail);
BK_API bk_status bk_ablation_save(const bk_ablation* a, const char* dir, bk_manifest* record);
BK_API void bk_ablation_free(bk_ablation* a);

/* ------------------------------------------------------------- evaluation */

typedef struct bk_eval bk_eval;

BK_API bk_status bk_eval_new(bk_eval** out);
/* One frame: a detections CSV against a scene CSV. */
BK_API bk_status bk_eval_add_frame(bk_eval* e, const char* detections_path, const char* scene_path);
BK_API bk_status bk_eval_compute(bk_eval* e, double* map, double* nds);
/* eval.csv and eval.json; computes first if needed. */
BK_API bk_status bk_eval_save(bk_eval* e, const char* dir, bk_manifest* record);
BK_API void bk_eval_free(bk_eval* e);

/* ---------------------------------------------------------- property suite */

typedef struct bk_suite_result {
  const char* name;
  const char* invariant;
  int criterion; /* acceptance criterion number, 0 for supporting suites */
  size_t cases;
  size_t failures;
  double seconds;
  double time_limit; /* 0 when unbounded */
  int passed;
  const char* detail;
} bk_suite_result;

typedef void (*bk_suite_callback)(const bk_suite_result* r, void* user);

/* Runs the suites whose names start with one of `only` (all when n_only is
 * 0). `sabotage_ray_scatter` corrupts the ray scatter for the run. Returns
 * BK_OK even when suites fail; `failed` receives their count. */
BK_API bk_status bk_check(int sabotage_ray_scatter, const char* const* only, size_t n_only,
                          bk_suite_callback callback, void* user, size_t* failed);
BK_API size_t bk_check_suite_count(void);
BK_API const char* bk_check_suite_name(size_t i);

#ifdef __cplusplus
}
#endif

#endif /* BEVKIT_H */
