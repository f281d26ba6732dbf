#include "defemb/model.hpp"

#include <cstdint>
#include <fstream>

namespace defemb {

// TXF1 checkpoint layout (little-endian):
//   "TXF1"
//   u8  precision            0 = f32, 1 = f64
//   i32 vocab_size h_e h_s layers heads ffn max_seq
//   u8  mode                 0 = encoder, 1 = encoder_decoder
//   u8  tie_lm_head
//   u8  mimic_head
//   u32 tensor_count
//   repeated: u16 name_len | name | u32 rows | u32 cols | raw scalars
// Tensors appear in visit order and are verified by name on load.

namespace {

template <class T>
void put(std::ofstream& f, T v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T take(std::ifstream& f, const std::string& path, const char* what) {
    T v{};
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!f) throw Error::runtime("checkpoint " + path + ": truncated while reading " + what);
    return v;
}

}  // namespace

Precision checkpoint_precision(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error::runtime("checkpoint " + path + ": cannot open");
    char magic[4];
    f.read(magic, 4);
    if (!f || std::string(magic, 4) != "TXF1")
        throw Error::runtime("checkpoint " + path + ": bad magic (want TXF1)");
    const auto prec = take<uint8_t>(f, path, "precision");
    if (prec > 1) throw Error::runtime("checkpoint " + path + ": unknown precision tag");
    return prec == 0 ? Precision::f32 : Precision::f64;
}

template <class S>
void save_checkpoint(const Params<S>& p, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error::runtime("checkpoint " + path + ": cannot open for writing");
    f.write("TXF1", 4);
    put<uint8_t>(f, std::is_same_v<S, float> ? 0 : 1);
    const ModelConfig& c = p.cfg;
    for (int v : {c.vocab_size, c.h_e, c.h_s, c.layers, c.heads, c.ffn, c.max_seq})
        put<int32_t>(f, int32_t(v));
    put<uint8_t>(f, c.mode == ModelMode::encoder ? 0 : 1);
    put<uint8_t>(f, c.tie_lm_head ? 1 : 0);
    put<uint8_t>(f, c.mimic_head ? 1 : 0);

    uint32_t count = 0;
    visit_tensors(p, [&](const std::string&, const Mat<S>&) { ++count; });
    put<uint32_t>(f, count);
    visit_tensors(p, [&](const std::string& name, const Mat<S>& t) {
        put<uint16_t>(f, uint16_t(name.size()));
        f.write(name.data(), std::streamsize(name.size()));
        put<uint32_t>(f, uint32_t(t.rows));
        put<uint32_t>(f, uint32_t(t.cols));
        f.write(reinterpret_cast<const char*>(t.a.data()),
                std::streamsize(t.size() * sizeof(S)));
    });
    f.flush();
    if (!f) throw Error::runtime("checkpoint " + path + ": write failed");
}

template <class S>
Params<S> load_checkpoint(const std::string& path) {
    const Precision want = std::is_same_v<S, float> ? Precision::f32 : Precision::f64;
    if (checkpoint_precision(path) != want)
        throw Error::runtime("checkpoint " + path + ": precision does not match the requested scalar type");

    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error::runtime("checkpoint " + path + ": cannot open");
    f.seekg(5);  // magic + precision already validated

    ModelConfig c;
    c.vocab_size = take<int32_t>(f, path, "vocab_size");
    c.h_e = take<int32_t>(f, path, "h_e");
    c.h_s = take<int32_t>(f, path, "h_s");
    c.layers = take<int32_t>(f, path, "layers");
    c.heads = take<int32_t>(f, path, "heads");
    c.ffn = take<int32_t>(f, path, "ffn");
    c.max_seq = take<int32_t>(f, path, "max_seq");
    const auto mode = take<uint8_t>(f, path, "mode");
    if (mode > 1) throw Error::runtime("checkpoint " + path + ": unknown mode tag");
    c.mode = mode == 0 ? ModelMode::encoder : ModelMode::encoder_decoder;
    c.tie_lm_head = take<uint8_t>(f, path, "tie_lm_head") != 0;
    c.mimic_head = take<uint8_t>(f, path, "mimic_head") != 0;
    c.precision = want;
    c.validate();

    Params<S> p;
    p.cfg = c;
    detail::shape_params(p);

    const auto count = take<uint32_t>(f, path, "tensor count");
    uint32_t expected = 0;
    visit_tensors(p, [&](const std::string&, const Mat<S>&) { ++expected; });
    if (count != expected)
        throw Error::runtime("checkpoint " + path + ": tensor count " + std::to_string(count) +
                             " does not match config (want " + std::to_string(expected) + ")");

    visit_tensors(p, [&](const std::string& name, Mat<S>& t) {
        const auto nlen = take<uint16_t>(f, path, "tensor name length");
        std::string got(nlen, '\0');
        f.read(got.data(), nlen);
        if (!f) throw Error::runtime("checkpoint " + path + ": truncated tensor name");
        if (got != name)
            throw Error::runtime("checkpoint " + path + ": tensor order mismatch, want " + name +
                                 " got " + got);
        const auto rows = take<uint32_t>(f, path, (name + " rows").c_str());
        const auto cols = take<uint32_t>(f, path, (name + " cols").c_str());
        if (rows != t.rows || cols != t.cols)
            throw Error::runtime("checkpoint " + path + ": shape mismatch for " + name);
        f.read(reinterpret_cast<char*>(t.a.data()), std::streamsize(t.size() * sizeof(S)));
        if (!f) throw Error::runtime("checkpoint " + path + ": truncated data for " + name);
    });
    f.peek();
    if (!f.eof()) throw Error::runtime("checkpoint " + path + ": trailing bytes after tensors");
    return p;
}

template void save_checkpoint<float>(const Params<float>&, const std::string&);
template void save_checkpoint<double>(const Params<double>&, const std::string&);
template Params<float> load_checkpoint<float>(const std::string&);
template Params<double> load_checkpoint<double>(const std::string&);

}  // namespace defemb
