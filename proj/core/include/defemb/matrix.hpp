#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace defemb {

// Minimal row-major dense matrix used by the model math. Kept deliberately
// plain: the training code wants direct pointer access for the hand-written
// backward passes.
template <class S>
struct Mat {
    size_t rows = 0, cols = 0;
    std::vector<S> a;

    Mat() = default;
    Mat(size_t r, size_t c) : rows(r), cols(c), a(r * c, S(0)) {}

    S* operator[](size_t r) { return a.data() + r * cols; }
    const S* operator[](size_t r) const { return a.data() + r * cols; }
    size_t size() const { return a.size(); }
    bool empty() const { return a.empty(); }
    void zero() { std::fill(a.begin(), a.end(), S(0)); }
};

// C (+)= A · B, shapes (m×k)·(k×n)
template <class S>
void matmul_nn(const Mat<S>& A, const Mat<S>& B, Mat<S>& C, bool accumulate = false) {
    if (!accumulate) C.zero();
    for (size_t i = 0; i < A.rows; ++i) {
        const S* ai = A[i];
        S* ci = C[i];
        for (size_t l = 0; l < A.cols; ++l) {
            const S v = ai[l];
            if (v == S(0)) continue;
            const S* bl = B[l];
            for (size_t j = 0; j < B.cols; ++j) ci[j] += v * bl[j];
        }
    }
}

// C (+)= A · Bᵀ, shapes (m×k)·(n×k)ᵀ
template <class S>
void matmul_nt(const Mat<S>& A, const Mat<S>& B, Mat<S>& C, bool accumulate = false) {
    if (!accumulate) C.zero();
    for (size_t i = 0; i < A.rows; ++i) {
        const S* ai = A[i];
        S* ci = C[i];
        for (size_t j = 0; j < B.rows; ++j) {
            const S* bj = B[j];
            S s = 0;
            for (size_t l = 0; l < A.cols; ++l) s += ai[l] * bj[l];
            ci[j] += s;
        }
    }
}

// C (+)= Aᵀ · B, shapes (m×k)ᵀ·(m×n)
template <class S>
void matmul_tn(const Mat<S>& A, const Mat<S>& B, Mat<S>& C, bool accumulate = false) {
    if (!accumulate) C.zero();
    for (size_t l = 0; l < A.rows; ++l) {
        const S* al = A[l];
        const S* bl = B[l];
        for (size_t i = 0; i < A.cols; ++i) {
            const S v = al[i];
            if (v == S(0)) continue;
            S* ci = C[i];
            for (size_t j = 0; j < B.cols; ++j) ci[j] += v * bl[j];
        }
    }
}

}  // namespace defemb
