#include <math.h>
#include <stdio.h>
#include <string.h>

#include "fcro.h"

#define CHECK(expr)                                                          \
  do {                                                                       \
    if (!(expr)) {                                                           \
      fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__, #expr,         \
              fcro_last_error());                                            \
      return 1;                                                              \
    }                                                                        \
  } while (0)

int main(void) {
  double data[] = {3.0, -3.0, 3.0, -3.0, 1.0, 1.0, -1.0, -1.0};
  FcroMatrix *z = NULL;
  FcroBasis *basis = NULL;
  double s[2], var;

  CHECK(fcro_matrix_new(2, 4, data, &z) == FCRO_STATUS_OK);
  CHECK(fcro_svd(z, s, 2, NULL, NULL) == FCRO_STATUS_OK);
  CHECK(fabs(s[0] - 6.0) < 1e-12 && fabs(s[1] - 2.0) < 1e-12);
  CHECK(fcro_build_space(z, 1, &basis) == FCRO_STATUS_OK);
  CHECK(fcro_captured_variance(z, basis, &var) == FCRO_STATUS_OK);
  CHECK(fabs(var - 0.9) < 1e-12);

  CHECK(fcro_build_space(z, 5, &basis) == FCRO_STATUS_INVALID_ARGUMENT);
  CHECK(strlen(fcro_last_error()) > 0);

  FcroGenSpec spec = fcro_gen_spec_default();
  spec.n = 500;
  FcroDataset *d = NULL;
  CHECK(fcro_generate(&spec, &d) == FCRO_STATUS_OK);
  CHECK(fcro_dataset_len(d) == 500);

  fcro_dataset_free(d);
  fcro_basis_free(basis);
  fcro_matrix_free(z);
  printf("ok %s\n", fcro_version());
  return 0;
}
