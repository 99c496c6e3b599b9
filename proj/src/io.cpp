#include "ophmae/io.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ophmae/errors.hpp"

namespace ophmae {

namespace {
using json = nlohmann::json;
}

void write_f32_array(const std::filesystem::path& path,
                     const std::vector<int>& shape,
                     const std::vector<double>& values) {
    size_t count = 1;
    for (int d : shape) count *= static_cast<size_t>(d);
    if (count != values.size())
        throw ShapeMismatch("array payload does not match shape for " + path.string());

    json header;
    header["dtype"] = "f32le";
    header["shape"] = shape;
    const std::string h = header.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path.string());
    const uint32_t hlen = static_cast<uint32_t>(h.size());
    os.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    os.write(h.data(), static_cast<std::streamsize>(h.size()));
    std::vector<float> payload(values.size());
    for (size_t i = 0; i < values.size(); ++i) payload[i] = static_cast<float>(values[i]);
    os.write(reinterpret_cast<const char*>(payload.data()),
             static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (!os) throw IoError("short write: " + path.string());
}

F32Array read_f32_array(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for read: " + path.string());
    uint32_t hlen = 0;
    is.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!is || hlen > (1u << 20)) throw IoError("bad array header in " + path.string());
    std::string h(hlen, '\0');
    is.read(h.data(), hlen);
    json header = json::parse(h, nullptr, false);
    if (header.is_discarded() || header.value("dtype", "") != "f32le")
        throw IoError("unsupported array header in " + path.string());

    F32Array out;
    out.shape = header.at("shape").get<std::vector<int>>();
    size_t count = 1;
    for (int d : out.shape) count *= static_cast<size_t>(d);
    std::vector<float> payload(count);
    is.read(reinterpret_cast<char*>(payload.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    if (!is) throw IoError("short read: " + path.string());
    out.values.resize(count);
    for (size_t i = 0; i < count; ++i) out.values[i] = static_cast<double>(payload[i]);
    return out;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for read: " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path.string());
    os << content;
    if (!os) throw IoError("short write: " + path.string());
}

uint64_t fnv1a64(const void* data, size_t n, uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string to_hex(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += '"';
    return out;
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
    const std::string text = read_text_file(path);
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    for (size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') { field += '"'; ++i; }
                else quoted = false;
            } else field += c;
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            row.push_back(std::move(field));
            field.clear();
        } else if (c == '\n') {
            row.push_back(std::move(field));
            field.clear();
            rows.push_back(std::move(row));
            row.clear();
        } else if (c != '\r') {
            field += c;
        }
    }
    if (!field.empty() || !row.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_csv(const std::filesystem::path& path,
               const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
    std::ostringstream os;
    auto emit = [&os](const std::vector<std::string>& r) {
        for (size_t i = 0; i < r.size(); ++i) {
            if (i) os << ',';
            os << csv_escape(r[i]);
        }
        os << '\n';
    };
    emit(header);
    for (const auto& r : rows) emit(r);
    write_text_file(path, os.str());
}

}  // namespace ophmae
