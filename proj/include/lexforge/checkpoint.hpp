#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lexforge/adamw.hpp"
#include "lexforge/encoder.hpp"
#include "lexforge/tensor.hpp"

namespace lexforge {

// On-disk model container. Layout:
//   magic "LXFG" | version u32 | meta length u64 + canonical JSON |
//   tensor count u64 | per tensor: name length u32 + bytes, dtype u8 (0=f32),
//   rows u64, cols u64, row-major little-endian f32 payload.
// Saving, loading and saving again produces byte-identical files.
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    nlohmann::json meta;
    std::vector<std::pair<std::string, Mat<float>>> tensors;

    const Mat<float>* find(const std::string& name) const {
        for (const auto& [n, m] : tensors) {
            if (n == name) return &m;
        }
        return nullptr;
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        check(out.good(), "cannot write checkpoint: " + path);
        out.write("LXFG", 4);
        write_u32(out, kVersion);
        const std::string meta_bytes = meta.dump();
        write_u64(out, meta_bytes.size());
        out.write(meta_bytes.data(), static_cast<std::streamsize>(meta_bytes.size()));
        write_u64(out, tensors.size());
        for (const auto& [name, m] : tensors) {
            write_u32(out, static_cast<std::uint32_t>(name.size()));
            out.write(name.data(), static_cast<std::streamsize>(name.size()));
            out.put(static_cast<char>(0));  // dtype tag 0 = f32
            write_u64(out, static_cast<std::uint64_t>(m.rows()));
            write_u64(out, static_cast<std::uint64_t>(m.cols()));
            for (Eigen::Index r = 0; r < m.rows(); ++r) {
                for (Eigen::Index c = 0; c < m.cols(); ++c) {
                    const float v = m(r, c);
                    out.write(reinterpret_cast<const char*>(&v), 4);
                }
            }
        }
        check(out.good(), "failed writing checkpoint: " + path);
    }

    static Checkpoint load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        check(in.good(), "cannot open checkpoint: " + path);
        char magic[4] = {};
        in.read(magic, 4);
        check(in.good() && std::string(magic, 4) == "LXFG",
              path + ": not a checkpoint file (bad magic)");
        const std::uint32_t version = read_u32(in, path);
        check(version == kVersion, path + ": unsupported checkpoint version");
        Checkpoint ckpt;
        const std::uint64_t meta_len = read_u64(in, path);
        std::string meta_bytes(meta_len, '\0');
        in.read(meta_bytes.data(), static_cast<std::streamsize>(meta_len));
        check(in.good(), path + ": truncated checkpoint meta");
        ckpt.meta = nlohmann::json::parse(meta_bytes);
        const std::uint64_t count = read_u64(in, path);
        ckpt.tensors.reserve(count);
        for (std::uint64_t t = 0; t < count; ++t) {
            const std::uint32_t name_len = read_u32(in, path);
            std::string name(name_len, '\0');
            in.read(name.data(), name_len);
            char dtype = 0;
            in.get(dtype);
            check(dtype == 0, path + ": unsupported tensor dtype");
            const auto rows = static_cast<Eigen::Index>(read_u64(in, path));
            const auto cols = static_cast<Eigen::Index>(read_u64(in, path));
            Mat<float> m(rows, cols);
            for (Eigen::Index r = 0; r < rows; ++r) {
                for (Eigen::Index c = 0; c < cols; ++c) {
                    float v = 0;
                    in.read(reinterpret_cast<char*>(&v), 4);
                    m(r, c) = v;
                }
            }
            check(in.good(), path + ": truncated tensor payload");
            ckpt.tensors.emplace_back(std::move(name), std::move(m));
        }
        return ckpt;
    }

private:
    static void write_u32(std::ofstream& out, std::uint32_t v) {
        out.write(reinterpret_cast<const char*>(&v), 4);
    }
    static void write_u64(std::ofstream& out, std::uint64_t v) {
        out.write(reinterpret_cast<const char*>(&v), 8);
    }
    static std::uint32_t read_u32(std::ifstream& in, const std::string& path) {
        std::uint32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 4);
        check(in.good(), path + ": truncated checkpoint");
        return v;
    }
    static std::uint64_t read_u64(std::ifstream& in, const std::string& path) {
        std::uint64_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 8);
        check(in.good(), path + ": truncated checkpoint");
        return v;
    }
};

// --- packing helpers ---------------------------------------------------------

inline void pack_tensors(Checkpoint& ckpt, std::vector<TensorRef<float>> refs,
                         const std::string& prefix = "") {
    for (const auto& t : refs) {
        Mat<float> m(t.rows, t.cols);
        for (Eigen::Index i = 0; i < t.size(); ++i) {
            // TensorRef flattens column-major (Eigen default)
            m(i % t.rows, i / t.rows) = t.data[i];
        }
        ckpt.tensors.emplace_back(prefix + t.name, std::move(m));
    }
}

inline void unpack_tensors(const Checkpoint& ckpt, std::vector<TensorRef<float>> refs,
                           const std::string& prefix = "") {
    for (auto& t : refs) {
        const Mat<float>* m = ckpt.find(prefix + t.name);
        check(m != nullptr, "checkpoint missing tensor: " + prefix + t.name);
        check(m->rows() == t.rows && m->cols() == t.cols,
              "checkpoint tensor shape mismatch: " + prefix + t.name);
        for (Eigen::Index i = 0; i < t.size(); ++i) {
            t.data[i] = (*m)(i % t.rows, i / t.rows);
        }
    }
}

inline void pack_optimizer(Checkpoint& ckpt, const OptimizerState<float>& state,
                           const std::vector<TensorRef<float>>& refs) {
    ckpt.meta["optimizer_step"] = state.step;
    for (std::size_t t = 0; t < refs.size(); ++t) {
        Mat<float> m = state.m[t];
        Mat<float> v = state.v[t];
        ckpt.tensors.emplace_back("adam.m." + refs[t].name, std::move(m));
        ckpt.tensors.emplace_back("adam.v." + refs[t].name, std::move(v));
    }
}

inline void unpack_optimizer(const Checkpoint& ckpt, OptimizerState<float>& state,
                             const std::vector<TensorRef<float>>& refs) {
    state.step = ckpt.meta.at("optimizer_step").get<std::int64_t>();
    state.m.clear();
    state.v.clear();
    for (const auto& t : refs) {
        const Mat<float>* m = ckpt.find("adam.m." + t.name);
        const Mat<float>* v = ckpt.find("adam.v." + t.name);
        check(m != nullptr && v != nullptr, "checkpoint missing optimizer state for " + t.name);
        state.m.push_back(*m);
        state.v.push_back(*v);
    }
}

}  // namespace lexforge
