#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcss/dcss.hpp"

namespace dcss {

// Binary checkpoint: layer layout, all parameter blocks in declaration
// order, the optimizer state and the run seed. Raw little-endian doubles, so
// the round trip is lossless.
inline constexpr char kCheckpointMagic[8] = {'D', 'C', 'S', 'S', 'C', 'K', 'P', '1'};

struct CheckpointMeta {
    std::uint64_t seed = 0;
    std::uint64_t input_dim = 0;
};

namespace detail {

inline void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

inline void write_f64(std::ostream& out, double v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline double read_f64(std::istream& in) {
    double v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

inline void write_block(std::ostream& out, const std::vector<double>& b) {
    write_u64(out, b.size());
    out.write(reinterpret_cast<const char*>(b.data()),
              static_cast<std::streamsize>(b.size() * sizeof(double)));
}

inline std::vector<double> read_block(std::istream& in) {
    std::vector<double> b(read_u64(in));
    in.read(reinterpret_cast<char*>(b.data()),
            static_cast<std::streamsize>(b.size() * sizeof(double)));
    return b;
}

inline void write_mlp(std::ostream& out, const Mlp& net) {
    write_u64(out, net.layers.size());
    for (const FcLayer& l : net.layers) {
        write_u64(out, l.w.rows);
        write_u64(out, l.w.cols);
        write_u64(out, static_cast<std::uint64_t>(l.act));
        write_block(out, l.w.data);
        write_block(out, l.b);
    }
}

inline Mlp read_mlp(std::istream& in) {
    Mlp net;
    const std::uint64_t n = read_u64(in);
    for (std::uint64_t i = 0; i < n; ++i) {
        FcLayer l;
        const std::uint64_t rows = read_u64(in);
        const std::uint64_t cols = read_u64(in);
        l.act = static_cast<Activation>(read_u64(in));
        l.w = Matrix(rows, cols);
        l.w.data = read_block(in);
        l.b = read_block(in);
        if (l.w.data.size() != rows * cols)
            throw std::runtime_error("checkpoint: corrupt layer block");
        net.layers.push_back(std::move(l));
    }
    return net;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const DcssModel& model,
                            const CheckpointMeta& meta, const AdamState* adam = nullptr) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::write_u64(out, meta.seed);
    detail::write_u64(out, meta.input_dim);

    detail::write_mlp(out, model.encoder);
    detail::write_mlp(out, model.decoder);
    detail::write_u64(out, model.head.centers.rows);
    detail::write_u64(out, model.head.centers.cols);
    detail::write_block(out, model.head.centers.data);
    detail::write_block(out, model.head.log_sigma);
    detail::write_f64(out, model.head.temperature);
    detail::write_u64(out, model.head.train_sigma ? 1 : 0);

    detail::write_u64(out, adam ? 1 : 0);
    if (adam) {
        detail::write_f64(out, adam->beta1);
        detail::write_f64(out, adam->beta2);
        detail::write_f64(out, adam->eps);
        detail::write_u64(out, static_cast<std::uint64_t>(adam->t));
        detail::write_u64(out, adam->m.size());
        for (const auto& b : adam->m) detail::write_block(out, b);
        for (const auto& b : adam->v) detail::write_block(out, b);
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline DcssModel load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr,
                                 AdamState* adam = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw std::runtime_error(path + ": not a checkpoint file");

    CheckpointMeta m;
    m.seed = detail::read_u64(in);
    m.input_dim = detail::read_u64(in);
    if (meta) *meta = m;

    DcssModel model;
    model.encoder = detail::read_mlp(in);
    model.decoder = detail::read_mlp(in);
    const std::uint64_t k = detail::read_u64(in);
    const std::uint64_t dim = detail::read_u64(in);
    model.head.centers = Matrix(k, dim);
    model.head.centers.data = detail::read_block(in);
    model.head.log_sigma = detail::read_block(in);
    model.head.temperature = detail::read_f64(in);
    model.head.train_sigma = detail::read_u64(in) != 0;

    const bool has_adam = detail::read_u64(in) != 0;
    if (has_adam) {
        AdamState st;
        st.beta1 = detail::read_f64(in);
        st.beta2 = detail::read_f64(in);
        st.eps = detail::read_f64(in);
        st.t = static_cast<long>(detail::read_u64(in));
        const std::uint64_t nb = detail::read_u64(in);
        st.m.resize(nb);
        st.v.resize(nb);
        for (auto& b : st.m) b = detail::read_block(in);
        for (auto& b : st.v) b = detail::read_block(in);
        if (adam) *adam = std::move(st);
    }
    if (!in) throw std::runtime_error(path + ": truncated checkpoint");
    return model;
}

}  // namespace dcss
