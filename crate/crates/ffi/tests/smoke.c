#include <math.h>
#include <stdio.h>
#include "searchmatch.h"

#define CHECK(cond)                                             \
    do {                                                        \
        if (!(cond)) {                                          \
            fprintf(stderr, "failed: %s (line %d)\n", #cond, __LINE__); \
            return 1;                                           \
        }                                                       \
    } while (0)

int main(void) {
    double v = 0.0;
    CHECK(sm_share_constant_rate(0.5, 1.0, &v) == SM_STATUS_OK);
    CHECK(fabs(v - 0.5) < 1e-12);
    CHECK(sm_share_constant_rate(2.0, 1.0, &v) == SM_STATUS_INVALID_INPUT);
    char msg[128];
    CHECK(sm_last_error_message(msg, sizeof msg) > 0);

    SmPreference *pref = NULL;
    CHECK(sm_preference_gaussian(64, 0.5, 0.1, &pref) == SM_STATUS_OK);
    SmSolveOptions opts = sm_solve_options_default();
    opts.acceleration = 5;
    SmProfile *prof = NULL;
    CHECK(sm_solve_fixed_point(pref, 1.0, 0.5, &opts, &prof) == SM_STATUS_OK);
    size_t n = sm_profile_len(prof);
    CHECK(n == 64);
    double shares[64];
    CHECK(sm_profile_copy(prof, shares, n) == SM_STATUS_OK);
    double mass = 0.0;
    for (size_t i = 0; i < n; i++) mass += shares[i] / (double)n;
    CHECK(fabs(mass - 1.0) < 1e-6);
    sm_profile_free(prof);
    sm_preference_free(pref);
    printf("ok\n");
    return 0;
}
