/* FIR filter (valid-mode convolution) over a text signal.
 *
 * Input file: "n k" then n signal values then k tap coefficients.
 * Output file: "m" (= n - k + 1) then one filtered value per line,
 * %.17g. Integer-valued inputs produce exact sums well inside double
 * precision, so reference outputs are stable across optimization levels.
 *
 * Usage: kernel INPUT.txt OUTPUT.txt [REPEATS]
 */
#include <stdio.h>
#include <stdlib.h>

#ifndef KERNEL_ENTRY
#define KERNEL_ENTRY main
#endif

static void fir(const double *x, const double *taps, double *y, long n, long k)
{
    long m = n - k + 1;
    for (long i = 0; i < m; i++) {
        double acc = 0.0;
        for (long j = 0; j < k; j++) {
            acc += x[i + j] * taps[j];
        }
        y[i] = acc;
    }
}

int KERNEL_ENTRY(int argc, char **argv)
{
    if (argc < 3) {
        fprintf(stderr, "usage: %s input.txt output.txt [repeats]\n", argv[0]);
        return 64;
    }
    int repeats = (argc > 3) ? atoi(argv[3]) : 1;
    if (repeats < 1) {
        repeats = 1;
    }
    FILE *f = fopen(argv[1], "r");
    if (!f) {
        fprintf(stderr, "cannot read %s\n", argv[1]);
        return 65;
    }
    long n, k;
    if (fscanf(f, "%ld %ld", &n, &k) != 2 || n <= 0 || k <= 0 || k > n) {
        fclose(f);
        return 65;
    }
    double *x = malloc((size_t)n * sizeof(double));
    double *taps = malloc((size_t)k * sizeof(double));
    double *y = malloc((size_t)(n - k + 1) * sizeof(double));
    if (!x || !taps || !y) {
        return 66;
    }
    for (long i = 0; i < n; i++) {
        if (fscanf(f, "%lf", &x[i]) != 1) {
            fclose(f);
            return 65;
        }
    }
    for (long j = 0; j < k; j++) {
        if (fscanf(f, "%lf", &taps[j]) != 1) {
            fclose(f);
            return 65;
        }
    }
    fclose(f);
    for (int r = 0; r < repeats; r++) {
        fir(x, taps, y, n, k);
    }
    FILE *out = fopen(argv[2], "w");
    if (!out) {
        return 66;
    }
    long m = n - k + 1;
    fprintf(out, "%ld\n", m);
    for (long i = 0; i < m; i++) {
        fprintf(out, "%.17g\n", y[i]);
    }
    free(x);
    free(taps);
    free(y);
    return fclose(out) == 0 ? 0 : 66;
}
