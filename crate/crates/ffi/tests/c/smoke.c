#include <stdio.h>
#include <string.h>

#include "tro_ffi.h"

#define CHECK(call)                                                          \
  do {                                                                       \
    TroStatus s_ = (call);                                                   \
    if (s_ != TRO_STATUS_OK) {                                               \
      fprintf(stderr, "%s -> %d: %s\n", #call, (int)s_, tro_last_error());   \
      return 1;                                                              \
    }                                                                        \
  } while (0)

static const char *DIAG =
    "{\"dim_h\": 2, \"dim_k\": 2,"
    " \"T_basis\": [[[[1,0],[0,0]],[[0,0],[0,0]]], [[[0,0],[1,0]],[[0,0],[0,0]]],"
    "               [[[0,0],[0,0]],[[1,0],[0,0]]], [[[0,0],[0,0]],[[0,0],[1,0]]]],"
    " \"X_basis\": [[[[1,0],[0,0]],[[0,0],[0,0]]], [[[0,0],[0,0]],[[0,0],[1,0]]]],"
    " \"P_coeffs\": [[[1,0],[0,0],[0,0],[0,0]], [[0,0],[0,0],[0,0],[1,0]]]}";

int main(void) {
  TroInstance *inst = NULL;
  TroExpectation *e = NULL;
  CHECK(tro_instance_from_json(DIAG, &inst));

  char *report = NULL;
  int pass = 0;
  CHECK(tro_run(inst, "extend", 0, 0, &report, &pass));
  if (!pass || strstr(report, "\"verdict\":\"PASS\"") == NULL) {
    fprintf(stderr, "extend failed: %s\n", report);
    return 1;
  }
  tro_string_free(report);

  CHECK(tro_extend(inst, &e));
  size_t n = 0;
  CHECK(tro_expectation_size(e, &n));
  if (n != 4) return 1;

  /* all-ones input: E keeps the entries with i + j even */
  double re[16], out_re[16], out_im[16];
  for (int k = 0; k < 16; k++) re[k] = 1.0;
  CHECK(tro_expectation_apply(e, re, NULL, out_re, out_im));
  for (int i = 0; i < 4; i++)
    for (int j = 0; j < 4; j++) {
      double want = (i + j) % 2 == 0 ? 1.0 : 0.0;
      double got = out_re[i * 4 + j];
      if (got - want > 1e-12 || want - got > 1e-12) {
        fprintf(stderr, "entry (%d,%d) = %g\n", i, j, got);
        return 1;
      }
    }

  double worst = -1.0;
  CHECK(tro_expectation_verify(e, 2, 0, &pass, &worst));
  if (!pass || worst > 1e-9) return 1;

  if (tro_instance_from_json("{\"dim_h\": 1}", &inst) != TRO_STATUS_INVALID_INPUT) return 1;
  if (strstr(tro_last_error(), "dim_k") == NULL) return 1;
  if (tro_instance_from_json(NULL, &inst) != TRO_STATUS_NULL) return 1;

  tro_expectation_free(e);
  tro_instance_free(inst);
  printf("ok %s\n", tro_version());
  return 0;
}
