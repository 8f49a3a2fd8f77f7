#include "povid/checkpoint.hpp"

#include <cstdint>
#include <fstream>
#include <vector>

#include "povid/errors.hpp"

namespace povid {

namespace {

constexpr char kMagic[4] = {'P', 'O', 'V', 'D'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw CorruptCheckpoint("truncated checkpoint");
    return v;
}

std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw CorruptCheckpoint("truncated checkpoint");
    return v;
}

}  // namespace

void save_checkpoint(const PolicyParams<float>& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(kMagic, 4);
    write_u32(out, kVersion);
    const PolicyConfig& cfg = params.config;
    write_u32(out, static_cast<std::uint32_t>(cfg.embed_dim));
    write_u32(out, static_cast<std::uint32_t>(cfg.num_layers));
    write_u32(out, static_cast<std::uint32_t>(cfg.num_heads));
    write_u32(out, static_cast<std::uint32_t>(cfg.ffn_dim));
    write_u32(out, static_cast<std::uint32_t>(cfg.max_seq_len));
    write_u32(out, static_cast<std::uint32_t>(cfg.vocab_size));

    std::uint32_t count = 0;
    params.for_each([&](const std::string&, const Mat<float>&) { ++count; });
    write_u32(out, count);

    params.for_each([&](const std::string& name, const Mat<float>& m) {
        write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(out, 2);  // rank
        write_u64(out, static_cast<std::uint64_t>(m.rows()));
        write_u64(out, static_cast<std::uint64_t>(m.cols()));
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                const float v = m(r, c);
                out.write(reinterpret_cast<const char*>(&v), sizeof(v));
            }
    });
    if (!out) throw IoError("write failed: " + path);
}

PolicyParams<float> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw CorruptCheckpoint("bad magic in " + path);
    const std::uint32_t version = read_u32(in);
    if (version != kVersion)
        throw CorruptCheckpoint("unsupported checkpoint version " + std::to_string(version));

    PolicyConfig cfg;
    cfg.embed_dim = static_cast<int>(read_u32(in));
    cfg.num_layers = static_cast<int>(read_u32(in));
    cfg.num_heads = static_cast<int>(read_u32(in));
    cfg.ffn_dim = static_cast<int>(read_u32(in));
    cfg.max_seq_len = static_cast<int>(read_u32(in));
    cfg.vocab_size = static_cast<int>(read_u32(in));
    PolicyParams<float> params;
    try {
        params = zeros_like_policy<float>(cfg);
    } catch (const ConfigError& e) {
        throw CorruptCheckpoint(std::string("invalid config block: ") + e.what());
    }

    const std::uint32_t count = read_u32(in);
    std::uint32_t expected = 0;
    params.for_each([&](const std::string&, const Mat<float>&) { ++expected; });
    if (count != expected)
        throw CorruptCheckpoint("array count mismatch in " + path);

    params.for_each([&](const std::string& name, Mat<float>& m) {
        const std::uint32_t name_len = read_u32(in);
        std::string stored(name_len, '\0');
        in.read(stored.data(), name_len);
        if (!in || stored != name)
            throw CorruptCheckpoint("unexpected array name '" + stored + "', wanted '" + name +
                                    "'");
        const std::uint32_t rank = read_u32(in);
        if (rank != 2) throw CorruptCheckpoint("unsupported array rank");
        const std::uint64_t rows = read_u64(in);
        const std::uint64_t cols = read_u64(in);
        if (rows != static_cast<std::uint64_t>(m.rows()) ||
            cols != static_cast<std::uint64_t>(m.cols()))
            throw CorruptCheckpoint("array shape mismatch for " + name);
        for (std::uint64_t r = 0; r < rows; ++r)
            for (std::uint64_t c = 0; c < cols; ++c) {
                float v = 0.0f;
                in.read(reinterpret_cast<char*>(&v), sizeof(v));
                if (!in) throw CorruptCheckpoint("truncated data for " + name);
                m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
            }
    });
    // No trailing bytes allowed.
    in.peek();
    if (!in.eof()) throw CorruptCheckpoint("trailing bytes in " + path);
    return params;
}

}  // namespace povid
