/* Exercises the shared library through its C header only. */
#include <math.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "bevkit.h"

static int failures = 0;

#define CHECK(cond)                                                   \
  do {                                                                \
    if (!(cond)) {                                                    \
      fprintf(stderr, "%s:%d: CHECK failed: %s\n", __FILE__, __LINE__, #cond); \
      ++failures;                                                     \
    }                                                                 \
  } while (0)

#define OK(call)                                                                      \
  do {                                                                                \
    bk_status s_ = (call);                                                            \
    if (s_ != BK_OK) {                                                                \
      fprintf(stderr, "%s:%d: %s -> %s: %s\n", __FILE__, __LINE__, #call, bk_status_name(s_), \
              bk_last_error());                                                       \
      exit(1);                                                                        \
    }                                                                                 \
  } while (0)

static char path_buf[4096];

static const char* join(const char* dir, const char* name) {
  snprintf(path_buf, sizeof path_buf, "%s/%s", dir, name);
  return path_buf;
}

static void test_errors(const char* root) {
  bk_scene* s = NULL;
  size_t n = 0;
  CHECK(bk_scene_box_count(NULL, &n) == BK_E_ARGUMENT);
  CHECK(strlen(bk_last_error()) > 0);
  CHECK(bk_scene_load(join(root, "does-not-exist"), &s) == BK_E_MISSING_INPUT);
  CHECK(s == NULL);
  CHECK(bk_exit_code(BK_E_MISSING_INPUT) == 2);
  CHECK(bk_exit_code(BK_E_DIMENSION) == 3);
  CHECK(bk_exit_code(BK_E_PROPERTY) == 1);
  CHECK(bk_exit_code(BK_OK) == 0);

  bk_config* c = NULL;
  CHECK(bk_config_parse("[train]\nlr = fast\n", &c) == BK_E_PARSE);
  CHECK(strstr(bk_last_error(), "train.lr") != NULL);
  CHECK(c == NULL);
  bk_config_free(NULL);
}

static void test_scene_roundtrip(const char* root) {
  bk_config* c = NULL;
  OK(bk_config_default(&c));
  uint64_t seed = 0;
  OK(bk_config_seed(c, &seed));
  CHECK(seed == 7);
  OK(bk_config_set_seed(c, 21));

  bk_scene* s = NULL;
  OK(bk_scene_generate(c, &s));
  size_t boxes = 0, cams = 0;
  OK(bk_scene_box_count(s, &boxes));
  OK(bk_scene_camera_count(s, &cams));
  CHECK(boxes == 4);
  CHECK(cams == 2);

  const char* dir = join(root, "scene21");
  char scene_dir[4096];
  snprintf(scene_dir, sizeof scene_dir, "%s", dir);
  bk_manifest* m = NULL;
  OK(bk_manifest_new("gen", "<defaults>", 21, scene_dir, &m));
  OK(bk_scene_save(s, scene_dir, m));
  size_t artifacts = 0;
  OK(bk_manifest_count(m, &artifacts));
  CHECK(artifacts == 3 + 3 * cams);
  OK(bk_manifest_write(m));
  bk_manifest_free(m);

  bk_scene* back = NULL;
  OK(bk_scene_load(scene_dir, &back));
  uint64_t back_seed = 0;
  OK(bk_scene_seed(back, &back_seed));
  CHECK(back_seed == 21);
  for (size_t i = 0; i < boxes; ++i) {
    bk_box a, b;
    OK(bk_scene_box(s, i, &a));
    OK(bk_scene_box(back, i, &b));
    CHECK(a.class_id == b.class_id);
    CHECK(memcmp(a.center, b.center, sizeof a.center) == 0);
  }
  CHECK(bk_scene_box(back, boxes, &(bk_box){0}) == BK_E_ARGUMENT);

  /* Oracle heatmap: one detection per object, at its BEV cell centre. */
  bk_model* model = NULL;
  OK(bk_model_init(c, &model));
  bk_result* r = NULL;
  OK(bk_run(model, back, 1, &r));
  size_t dets = 0;
  OK(bk_result_detection_count(r, &dets));
  CHECK(dets == boxes);
  for (size_t i = 0; i < dets; ++i) {
    bk_detection d;
    OK(bk_result_detection(r, i, &d));
    int matched = 0;
    for (size_t j = 0; j < boxes; ++j) {
      bk_box b;
      OK(bk_scene_box(back, j, &b));
      /* Default 16 x 16 grid over [-8, 8) m: 1 m cells centred on k + 0.5. */
      const double cx = floor(b.center[0]) + 0.5;
      const double cy = floor(b.center[1]) + 0.5;
      if (b.class_id == d.class_id && fabs(d.center[0] - cx) < 1e-12 && fabs(d.center[1] - cy) < 1e-12)
        matched = 1;
    }
    CHECK(matched);
  }
  size_t shape[3] = {0, 0, 0}, nz_ray = 0, nz_point = 0;
  OK(bk_result_bev_shape(r, BK_BEV_FUSED, shape));
  CHECK(shape[0] == shape[1] && shape[0] > 0 && shape[2] > 0);
  OK(bk_result_bev_nonzero(r, BK_BEV_RAY, &nz_ray));
  OK(bk_result_bev_nonzero(r, BK_BEV_POINT, &nz_point));
  CHECK(nz_point <= nz_ray);
  CHECK(bk_result_bev_shape(r, (bk_bev_kind)9, shape) == BK_E_ARGUMENT);
  bk_result_free(r);

  /* Detections equal to the ground truth score perfectly. */
  const char* det_path = join(root, "perfect.csv");
  FILE* f = fopen(det_path, "w");
  CHECK(f != NULL);
  fprintf(f, "class_id,score,x,y,z,length,width,height,yaw,vx,vy\n");
  for (size_t j = 0; j < boxes; ++j) {
    bk_box b;
    OK(bk_scene_box(back, j, &b));
    fprintf(f, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", b.class_id,
            1.0 - 0.1 * (double)j, b.center[0], b.center[1], b.center[2], b.size[0], b.size[1],
            b.size[2], b.yaw, b.velocity[0], b.velocity[1]);
  }
  fclose(f);
  char det_copy[4096], scene_csv[4200];
  snprintf(det_copy, sizeof det_copy, "%s", det_path);
  snprintf(scene_csv, sizeof scene_csv, "%s/scene.csv", scene_dir);
  bk_eval* e = NULL;
  OK(bk_eval_new(&e));
  OK(bk_eval_add_frame(e, det_copy, scene_csv));
  double map = -1, nds = -1;
  OK(bk_eval_compute(e, &map, &nds));
  CHECK(map == 1.0);
  CHECK(nds == 1.0);
  bk_eval_free(e);

  /* Empty detections score zero. */
  f = fopen(det_copy, "w");
  fprintf(f, "class_id,score,x,y,z,length,width,height,yaw,vx,vy\n");
  fclose(f);
  OK(bk_eval_new(&e));
  OK(bk_eval_add_frame(e, det_copy, scene_csv));
  OK(bk_eval_compute(e, &map, &nds));
  CHECK(map == 0.0);
  bk_eval_free(e);

  /* A model built for another class count is a shape error. */
  bk_config* c5 = NULL;
  OK(bk_config_parse("[scene]\nclasses = 5\n", &c5));
  bk_model* m5 = NULL;
  OK(bk_model_init(c5, &m5));
  bk_result* bad = NULL;
  CHECK(bk_run(m5, back, 0, &bad) == BK_E_DIMENSION);
  CHECK(bad == NULL);
  CHECK(strstr(bk_last_error(), "run") != NULL);
  bk_model_free(m5);
  bk_config_free(c5);

  /* Model files round-trip. */
  OK(bk_model_save(model, join(root, "init.bkm"), NULL));
  bk_model* loaded = NULL;
  OK(bk_model_load(join(root, "init.bkm"), &loaded));
  size_t a = 0, b = 0;
  OK(bk_model_scalar_count(model, &a));
  OK(bk_model_scalar_count(loaded, &b));
  CHECK(a == b && a > 0);
  bk_model_free(loaded);

  bk_model_free(model);
  bk_scene_free(back);
  bk_scene_free(s);
  bk_config_free(c);
}

static void test_empty_scene(void) {
  bk_config* c = NULL;
  OK(bk_config_parse("[scene]\nboxes = 0\n", &c));
  bk_scene* s = NULL;
  OK(bk_scene_generate(c, &s));
  bk_model* m = NULL;
  OK(bk_model_init(c, &m));
  bk_result* r = NULL;
  OK(bk_run(m, s, 1, &r));
  size_t n = 99;
  OK(bk_result_detection_count(r, &n));
  CHECK(n == 0);
  bk_result_free(r);
  bk_model_free(m);
  bk_scene_free(s);
  bk_config_free(c);
}

static void count_cb(const bk_suite_result* r, void* user) {
  CHECK(r->name != NULL && r->invariant != NULL);
  if (r->passed) ++*(size_t*)user;
}

static void test_check_subset(void) {
  CHECK(bk_check_suite_count() == 24);
  CHECK(strcmp(bk_check_suite_name(0), "geometry.roundtrip") == 0);
  CHECK(bk_check_suite_name(1000) == NULL);
  const char* only[] = {"geometry.", "hungarian."};
  size_t passed = 0, failed = 99;
  OK(bk_check(0, only, 2, count_cb, &passed, &failed));
  CHECK(failed == 0);
  CHECK(passed == 2);
}

int main(int argc, char** argv) {
  if (argc < 2) {
    fprintf(stderr, "usage: %s <scratch-dir>\n", argv[0]);
    return 2;
  }
  bk_set_threads(1);
  CHECK(bk_threads() >= 1);
  CHECK(strlen(bk_version()) > 0);
  test_errors(argv[1]);
  test_scene_roundtrip(argv[1]);
  test_empty_scene();
  test_check_subset();
  if (failures) {
    fprintf(stderr, "%d check(s) failed\n", failures);
    return 1;
  }
  printf("capi: all checks passed\n");
  return 0;
}
