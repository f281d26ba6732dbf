#include "defemb/embedding.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "defemb/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "EMB1/TXF1 writers assume a little-endian host");

namespace defemb {

EmbeddingMatrix load_embeddings(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error::runtime("cannot open embedding file: " + path);

    char magic[4];
    if (!in.read(magic, 4))
        throw Error::runtime(path + ": truncated at byte 0 (missing magic)");
    if (std::memcmp(magic, "EMB1", 4) != 0)
        throw Error::runtime(path + ": bad magic at byte 0 (expected EMB1)");

    uint32_t rows = 0, cols = 0;
    if (!in.read(reinterpret_cast<char*>(&rows), 4))
        throw Error::runtime(path + ": truncated at byte 4 (missing row count)");
    if (!in.read(reinterpret_cast<char*>(&cols), 4))
        throw Error::runtime(path + ": truncated at byte 8 (missing column count)");

    EmbeddingMatrix emb(rows, cols);
    const size_t payload = emb.data.size() * sizeof(float);
    if (payload > 0 && !in.read(reinterpret_cast<char*>(emb.data.data()),
                                static_cast<std::streamsize>(payload))) {
        const size_t got = static_cast<size_t>(in.gcount());
        throw Error::runtime(path + ": truncated at byte " + std::to_string(12 + got) +
                             " (expected " + std::to_string(12 + payload) + " bytes total)");
    }
    in.peek();
    if (!in.eof())
        throw Error::runtime(path + ": trailing bytes after offset " +
                             std::to_string(12 + payload));
    return emb;
}

void save_embeddings(const EmbeddingMatrix& emb, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error::runtime("cannot open embedding file for writing: " + path);
    out.write("EMB1", 4);
    out.write(reinterpret_cast<const char*>(&emb.rows), 4);
    out.write(reinterpret_cast<const char*>(&emb.cols), 4);
    out.write(reinterpret_cast<const char*>(emb.data.data()),
              static_cast<std::streamsize>(emb.data.size() * sizeof(float)));
    if (!out) throw Error::runtime("write failure: " + path);
}

}  // namespace defemb
