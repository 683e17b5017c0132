#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "lexforge/error.hpp"
#include "lexforge/wordpiece.hpp"

namespace lexforge {

// A fixed-length window of a document's token stream. Concatenating a
// document's chunks in index order reproduces the token sequence exactly.
struct Chunk {
    std::string doc_id;
    int index = 0;
    std::vector<int> ids;
    std::vector<std::uint8_t> word_start;
};

inline std::vector<Chunk> chunk_document(const std::string& doc_id, const TokenizedText& tokens,
                                         int chunk_len) {
    check(chunk_len >= 1, "chunk_document: chunk_len must be >= 1");
    std::vector<Chunk> chunks;
    const std::size_t n = tokens.size();
    for (std::size_t begin = 0; begin < n; begin += static_cast<std::size_t>(chunk_len)) {
        const std::size_t end = std::min(n, begin + static_cast<std::size_t>(chunk_len));
        Chunk chunk;
        chunk.doc_id = doc_id;
        chunk.index = static_cast<int>(chunks.size());
        chunk.ids.assign(tokens.ids.begin() + static_cast<std::ptrdiff_t>(begin),
                         tokens.ids.begin() + static_cast<std::ptrdiff_t>(end));
        chunk.word_start.assign(tokens.word_start.begin() + static_cast<std::ptrdiff_t>(begin),
                                tokens.word_start.begin() + static_cast<std::ptrdiff_t>(end));
        chunks.push_back(std::move(chunk));
    }
    return chunks;
}

using ChunkedDoc = std::vector<Chunk>;

// Length-prefixed binary cache so a restarted pipeline can skip re-tokenizing.
// Record: u32 doc_id length, doc_id bytes, u32 index, u32 token count, then
// token ids (i32) and word-start flags (u8), all little-endian.
inline void save_chunk_cache(const std::string& path, const std::vector<ChunkedDoc>& docs) {
    std::ofstream out(path, std::ios::binary);
    check(out.good(), "cannot write chunk cache: " + path);
    auto put_u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    put_u32(static_cast<std::uint32_t>(docs.size()));
    for (const auto& doc : docs) {
        put_u32(static_cast<std::uint32_t>(doc.size()));
        for (const auto& chunk : doc) {
            put_u32(static_cast<std::uint32_t>(chunk.doc_id.size()));
            out.write(chunk.doc_id.data(), static_cast<std::streamsize>(chunk.doc_id.size()));
            put_u32(static_cast<std::uint32_t>(chunk.index));
            put_u32(static_cast<std::uint32_t>(chunk.ids.size()));
            for (int id : chunk.ids) {
                const std::int32_t v = id;
                out.write(reinterpret_cast<const char*>(&v), 4);
            }
            out.write(reinterpret_cast<const char*>(chunk.word_start.data()),
                      static_cast<std::streamsize>(chunk.word_start.size()));
        }
    }
}

inline std::vector<ChunkedDoc> load_chunk_cache(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    check(in.good(), "cannot open chunk cache: " + path);
    auto get_u32 = [&]() {
        std::uint32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 4);
        check(in.good(), path + ": truncated chunk cache");
        return v;
    };
    std::vector<ChunkedDoc> docs(get_u32());
    for (auto& doc : docs) {
        doc.resize(get_u32());
        for (auto& chunk : doc) {
            std::string id(get_u32(), '\0');
            in.read(id.data(), static_cast<std::streamsize>(id.size()));
            chunk.doc_id = std::move(id);
            chunk.index = static_cast<int>(get_u32());
            const std::uint32_t count = get_u32();
            chunk.ids.resize(count);
            for (auto& tok : chunk.ids) {
                std::int32_t v = 0;
                in.read(reinterpret_cast<char*>(&v), 4);
                tok = v;
            }
            chunk.word_start.resize(count);
            in.read(reinterpret_cast<char*>(chunk.word_start.data()), count);
            check(in.good(), path + ": truncated chunk cache");
        }
    }
    return docs;
}

}  // namespace lexforge
