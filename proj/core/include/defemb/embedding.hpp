#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace defemb {

// |V| × h_e embedding table, row-major f32. Stored as the `EMB1` binary
// format: 4-byte magic, u32 rows, u32 cols (little-endian), then rows*cols
// f32 values. Round-trips are bit-exact.
struct EmbeddingMatrix {
    uint32_t rows = 0;
    uint32_t cols = 0;
    std::vector<float> data;

    EmbeddingMatrix() = default;
    EmbeddingMatrix(uint32_t r, uint32_t c) : rows(r), cols(c), data(size_t(r) * c, 0.0f) {}

    float* row(size_t i) { return data.data() + i * cols; }
    const float* row(size_t i) const { return data.data() + i * cols; }
};

EmbeddingMatrix load_embeddings(const std::string& path);
void save_embeddings(const EmbeddingMatrix& emb, const std::string& path);

}  // namespace defemb
