/* Black-and-white threshold filter over a P5 (binary) PGM image:
 * out[i] = (in[i] > T) ? 255 : 0.
 *
 * Usage: kernel INPUT.pgm OUTPUT.pgm [REPEATS] [T]
 * REPEATS re-runs the filter over the same input (timing knob; the
 * output is identical for any repeat count). T defaults to 128.
 *
 * Single file, C99, single thread, deterministic. Exits nonzero on I/O
 * or format errors. KERNEL_ENTRY renames main for multi-version linking.
 */
#include <stdio.h>
#include <stdlib.h>

#ifndef KERNEL_ENTRY
#define KERNEL_ENTRY main
#endif

static void threshold(const unsigned char *in, unsigned char *out, long n, int t)
{
    for (long i = 0; i < n; i++) {
        out[i] = (in[i] > t) ? 255 : 0;
    }
}

static unsigned char *read_pgm(const char *path, long *w, long *h)
{
    FILE *f = fopen(path, "rb");
    if (!f) {
        return NULL;
    }
    long maxval;
    if (fscanf(f, "P5 %ld %ld %ld", w, h, &maxval) != 3 || maxval != 255 ||
        *w <= 0 || *h <= 0) {
        fclose(f);
        return NULL;
    }
    if (fgetc(f) == EOF) {
        fclose(f);
        return NULL;
    }
    long n = *w * *h;
    unsigned char *data = malloc((size_t)n);
    if (!data || fread(data, 1, (size_t)n, f) != (size_t)n) {
        free(data);
        fclose(f);
        return NULL;
    }
    fclose(f);
    return data;
}

static int write_pgm(const char *path, const unsigned char *data, long w, long h)
{
    FILE *f = fopen(path, "wb");
    if (!f) {
        return -1;
    }
    fprintf(f, "P5\n%ld %ld\n255\n", w, h);
    if (fwrite(data, 1, (size_t)(w * h), f) != (size_t)(w * h)) {
        fclose(f);
        return -1;
    }
    return fclose(f);
}

int KERNEL_ENTRY(int argc, char **argv)
{
    if (argc < 3) {
        fprintf(stderr, "usage: %s input.pgm output.pgm [repeats] [threshold]\n", argv[0]);
        return 64;
    }
    int repeats = (argc > 3) ? atoi(argv[3]) : 1;
    int t = (argc > 4) ? atoi(argv[4]) : 128;
    if (repeats < 1) {
        repeats = 1;
    }
    long w, h;
    unsigned char *in = read_pgm(argv[1], &w, &h);
    if (!in) {
        fprintf(stderr, "cannot read %s\n", argv[1]);
        return 65;
    }
    unsigned char *out = malloc((size_t)(w * h));
    if (!out) {
        free(in);
        return 66;
    }
    for (int r = 0; r < repeats; r++) {
        threshold(in, out, w * h, t);
    }
    int rc = write_pgm(argv[2], out, w, h);
    free(in);
    free(out);
    if (rc != 0) {
        fprintf(stderr, "cannot write %s\n", argv[2]);
        return 66;
    }
    return 0;
}
