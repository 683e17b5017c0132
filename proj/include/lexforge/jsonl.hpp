#pragma once

#include <fstream>
#include <functional>
#include <string>

#include <json.hpp>

#include "lexforge/error.hpp"

namespace lexforge {

using json = nlohmann::json;

// Calls fn(line_number, object) for every non-empty line. Line numbers are
// 1-based so they can be quoted in error messages as-is.
inline void for_each_jsonl_record(const std::string& path,
                                  const std::function<void(int, const json&)>& fn) {
    std::ifstream in(path);
    check(in.good(), "cannot open file: " + path);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json record = json::parse(line, nullptr, false);
        if (record.is_discarded() || !record.is_object()) {
            fail(path + ": malformed record at line " + std::to_string(line_no));
        }
        fn(line_no, record);
    }
}

inline void write_json_file(const std::string& path, const json& value) {
    std::ofstream out(path);
    check(out.good(), "cannot write file: " + path);
    out << value.dump(2) << "\n";
}

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    check(in.good(), "cannot open file: " + path);
    json value = json::parse(in, nullptr, false);
    check(!value.is_discarded(), path + ": invalid JSON");
    return value;
}

}  // namespace lexforge
