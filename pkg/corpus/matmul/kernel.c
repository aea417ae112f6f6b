/* Dense matrix multiply over whitespace-separated text matrices.
 *
 * Input file: "n m" then n*m values of A, "m p" then m*p values of B.
 * Output file: "n p" then C = A*B, rows newline-separated, values with
 * %.17g (integer-valued inputs stay integer-exact, so identity * A
 * reproduces A byte for byte).
 *
 * Usage: kernel INPUT.txt OUTPUT.txt [REPEATS]
 */
#include <stdio.h>
#include <stdlib.h>

#ifndef KERNEL_ENTRY
#define KERNEL_ENTRY main
#endif

static double *read_matrix(FILE *f, long *rows, long *cols)
{
    if (fscanf(f, "%ld %ld", rows, cols) != 2 || *rows <= 0 || *cols <= 0) {
        return NULL;
    }
    long n = *rows * *cols;
    double *m = malloc((size_t)n * sizeof(double));
    if (!m) {
        return NULL;
    }
    for (long i = 0; i < n; i++) {
        if (fscanf(f, "%lf", &m[i]) != 1) {
            free(m);
            return NULL;
        }
    }
    return m;
}

static void multiply(const double *a, const double *b, double *c,
                     long n, long m, long p)
{
    for (long i = 0; i < n; i++) {
        for (long j = 0; j < p; j++) {
            double sum = 0.0;
            for (long k = 0; k < m; k++) {
                sum += a[i * m + k] * b[k * p + j];
            }
            c[i * p + j] = sum;
        }
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
    long n, m, m2, p;
    double *a = read_matrix(f, &n, &m);
    double *b = a ? read_matrix(f, &m2, &p) : NULL;
    fclose(f);
    if (!a || !b || m != m2) {
        free(a);
        free(b);
        fprintf(stderr, "bad matrix file %s\n", argv[1]);
        return 65;
    }
    double *c = malloc((size_t)(n * p) * sizeof(double));
    if (!c) {
        free(a);
        free(b);
        return 66;
    }
    for (int r = 0; r < repeats; r++) {
        multiply(a, b, c, n, m, p);
    }
    FILE *out = fopen(argv[2], "w");
    if (!out) {
        free(a);
        free(b);
        free(c);
        return 66;
    }
    fprintf(out, "%ld %ld\n", n, p);
    for (long i = 0; i < n; i++) {
        for (long j = 0; j < p; j++) {
            fprintf(out, "%.17g%c", c[i * p + j], j + 1 == p ? '\n' : ' ');
        }
    }
    free(a);
    free(b);
    free(c);
    return fclose(out) == 0 ? 0 : 66;
}
