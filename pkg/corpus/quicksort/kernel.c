/* In-place quicksort (median-of-three pivot, insertion sort below 16)
 * over a text list of integers.
 *
 * Input file: "n" then n integers. Output: the integers sorted
 * ascending, one per line. REPEATS re-sorts a fresh copy of the
 * original each round.
 *
 * Usage: kernel INPUT.txt OUTPUT.txt [REPEATS]
 */
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#ifndef KERNEL_ENTRY
#define KERNEL_ENTRY main
#endif

static void insertion(long *a, long lo, long hi)
{
    for (long i = lo + 1; i <= hi; i++) {
        long v = a[i];
        long j = i - 1;
        while (j >= lo && a[j] > v) {
            a[j + 1] = a[j];
            j--;
        }
        a[j + 1] = v;
    }
}

static void swap(long *a, long i, long j)
{
    long t = a[i];
    a[i] = a[j];
    a[j] = t;
}

static void quicksort(long *a, long lo, long hi)
{
    while (hi - lo >= 16) {
        long mid = lo + (hi - lo) / 2;
        if (a[mid] < a[lo]) {
            swap(a, mid, lo);
        }
        if (a[hi] < a[lo]) {
            swap(a, hi, lo);
        }
        if (a[hi] < a[mid]) {
            swap(a, hi, mid);
        }
        long pivot = a[mid];
        long i = lo;
        long j = hi;
        while (i <= j) {
            while (a[i] < pivot) {
                i++;
            }
            while (a[j] > pivot) {
                j--;
            }
            if (i <= j) {
                swap(a, i, j);
                i++;
                j--;
            }
        }
        /* recurse into the smaller side, loop on the larger */
        if (j - lo < hi - i) {
            quicksort(a, lo, j);
            lo = i;
        } else {
            quicksort(a, i, hi);
            hi = j;
        }
    }
    insertion(a, lo, hi);
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
    long n;
    if (fscanf(f, "%ld", &n) != 1 || n <= 0) {
        fclose(f);
        return 65;
    }
    long *orig = malloc((size_t)n * sizeof(long));
    long *work = malloc((size_t)n * sizeof(long));
    if (!orig || !work) {
        return 66;
    }
    for (long i = 0; i < n; i++) {
        if (fscanf(f, "%ld", &orig[i]) != 1) {
            fclose(f);
            return 65;
        }
    }
    fclose(f);
    for (int r = 0; r < repeats; r++) {
        memcpy(work, orig, (size_t)n * sizeof(long));
        quicksort(work, 0, n - 1);
    }
    FILE *out = fopen(argv[2], "w");
    if (!out) {
        return 66;
    }
    for (long i = 0; i < n; i++) {
        fprintf(out, "%ld\n", work[i]);
    }
    free(orig);
    free(work);
    return fclose(out) == 0 ? 0 : 66;
}
