/* Naive substring search: report every occurrence of a pattern in a
 * text body.
 *
 * Input file: first line is the pattern, the rest is the haystack
 * (searched as raw bytes including newlines). Output: one byte offset
 * per match line, then "total <count>".
 *
 * Usage: kernel INPUT.txt OUTPUT.txt [REPEATS]
 */
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#ifndef KERNEL_ENTRY
#define KERNEL_ENTRY main
#endif

static long search(const char *hay, long n, const char *pat, long k,
                   long *hits, long max_hits)
{
    long count = 0;
    for (long i = 0; i + k <= n; i++) {
        long j = 0;
        while (j < k && hay[i + j] == pat[j]) {
            j++;
        }
        if (j == k) {
            if (count < max_hits) {
                hits[count] = i;
            }
            count++;
        }
    }
    return count;
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
    FILE *f = fopen(argv[1], "rb");
    if (!f) {
        fprintf(stderr, "cannot read %s\n", argv[1]);
        return 65;
    }
    if (fseek(f, 0, SEEK_END) != 0) {
        return 65;
    }
    long size = ftell(f);
    rewind(f);
    char *buf = malloc((size_t)size + 1);
    if (!buf || fread(buf, 1, (size_t)size, f) != (size_t)size) {
        fclose(f);
        return 65;
    }
    fclose(f);
    buf[size] = '\0';
    char *newline = memchr(buf, '\n', (size_t)size);
    if (!newline) {
        free(buf);
        return 65;
    }
    long k = newline - buf;
    char *hay = newline + 1;
    long n = size - k - 1;
    if (k <= 0 || n <= 0) {
        free(buf);
        return 65;
    }
    long max_hits = 1 << 16;
    long *hits = malloc((size_t)max_hits * sizeof(long));
    if (!hits) {
        return 66;
    }
    long count = 0;
    for (int r = 0; r < repeats; r++) {
        count = search(hay, n, buf, k, hits, max_hits);
    }
    FILE *out = fopen(argv[2], "w");
    if (!out) {
        return 66;
    }
    long reported = count < max_hits ? count : max_hits;
    for (long i = 0; i < reported; i++) {
        fprintf(out, "%ld\n", hits[i]);
    }
    fprintf(out, "total %ld\n", count);
    free(buf);
    free(hits);
    return fclose(out) == 0 ? 0 : 66;
}
