#include "stpg/io.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace stpg {
namespace {

constexpr char kMagic[4] = {'S', 'T', 'P', 'G'};
constexpr uint8_t kVersion = 0x01;

int64_t shape_product(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

void check_writable_shape(const std::vector<int>& shape) {
    if (shape.empty()) throw IoError(IoStatus::zero_dim, "tensor io: empty shape");
    for (int d : shape)
        if (d < 1)
            throw IoError(IoStatus::zero_dim,
                          "tensor io: zero or negative dimension in " + shape_string(shape));
}

void write_header(std::ofstream& f, const std::string& dtype, const std::vector<int>& shape) {
    nlohmann::json header;
    header["dtype"] = dtype;
    header["shape"] = shape;
    std::string line = header.dump();
    f.write(kMagic, 4);
    char v = static_cast<char>(kVersion);
    f.write(&v, 1);
    f.write(line.data(), static_cast<std::streamsize>(line.size()));
    f.put('\n');
}

// Payload bytes go out little-endian regardless of host order.
void write_f32_le(std::ofstream& f, const float* p, int64_t n) {
    std::vector<unsigned char> buf(static_cast<size_t>(n) * 4);
    for (int64_t i = 0; i < n; ++i) {
        uint32_t bits;
        std::memcpy(&bits, &p[i], 4);
        buf[4 * i + 0] = static_cast<unsigned char>(bits & 0xff);
        buf[4 * i + 1] = static_cast<unsigned char>((bits >> 8) & 0xff);
        buf[4 * i + 2] = static_cast<unsigned char>((bits >> 16) & 0xff);
        buf[4 * i + 3] = static_cast<unsigned char>((bits >> 24) & 0xff);
    }
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

struct Header {
    std::string dtype;
    std::vector<int> shape;
};

Header read_header(std::ifstream& f, const std::string& path) {
    char magic[4];
    if (!f.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError(IoStatus::bad_magic, path + ": bad magic");
    char version;
    if (!f.read(&version, 1) || static_cast<uint8_t>(version) != kVersion)
        throw IoError(IoStatus::bad_version, path + ": unsupported version");
    std::string line;
    if (!std::getline(f, line)) throw IoError(IoStatus::bad_header, path + ": missing header line");

    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("dtype") || !j.contains("shape") ||
        !j["dtype"].is_string() || !j["shape"].is_array())
        throw IoError(IoStatus::bad_header, path + ": malformed header");

    Header h;
    h.dtype = j["dtype"].get<std::string>();
    for (const auto& d : j["shape"]) {
        if (!d.is_number_integer())
            throw IoError(IoStatus::bad_header, path + ": non-integer shape entry");
        h.shape.push_back(d.get<int>());
    }
    if (h.shape.empty()) throw IoError(IoStatus::bad_header, path + ": empty shape");
    for (int d : h.shape)
        if (d < 1) throw IoError(IoStatus::bad_header, path + ": non-positive shape entry");
    if (h.dtype != "f32" && h.dtype != "u8")
        throw IoError(IoStatus::bad_header, path + ": unknown dtype '" + h.dtype + "'");
    return h;
}

void check_expected(const Header& h, const std::vector<int>& expected, const std::string& path) {
    if (!expected.empty() && h.shape != expected)
        throw IoError(IoStatus::shape_mismatch, path + ": shape " + shape_string(h.shape) +
                                                    " does not match expected " +
                                                    shape_string(expected));
}

std::vector<unsigned char> read_payload(std::ifstream& f, int64_t expected_bytes,
                                        const std::string& path) {
    std::vector<unsigned char> buf(static_cast<size_t>(expected_bytes));
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(expected_bytes));
    if (f.gcount() != expected_bytes)
        throw IoError(IoStatus::truncated,
                      path + ": payload truncated (" + std::to_string(f.gcount()) + " of " +
                          std::to_string(expected_bytes) + " bytes)");
    char extra;
    if (f.read(&extra, 1))
        throw IoError(IoStatus::trailing_data, path + ": trailing bytes after payload");
    return buf;
}

}  // namespace

void write_tensor(const std::string& path, const Tensor& t) {
    check_writable_shape(t.shape());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError(IoStatus::io_failure, path + ": cannot open for writing");
    write_header(f, "f32", t.shape());
    write_f32_le(f, t.data(), t.size());
    if (!f) throw IoError(IoStatus::io_failure, path + ": write failed");
}

void write_u8(const std::string& path, const std::vector<int>& shape,
              const std::vector<uint8_t>& v) {
    check_writable_shape(shape);
    if (shape_product(shape) != static_cast<int64_t>(v.size()))
        throw IoError(IoStatus::shape_mismatch, path + ": payload size does not match shape");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError(IoStatus::io_failure, path + ": cannot open for writing");
    write_header(f, "u8", shape);
    f.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size()));
    if (!f) throw IoError(IoStatus::io_failure, path + ": write failed");
}

Tensor read_tensor(const std::string& path, const std::vector<int>& expected_shape) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError(IoStatus::io_failure, path + ": cannot open");
    Header h = read_header(f, path);
    if (h.dtype != "f32") throw IoError(IoStatus::bad_header, path + ": expected dtype f32");
    check_expected(h, expected_shape, path);
    int64_t n = shape_product(h.shape);
    auto buf = read_payload(f, n * 4, path);
    Tensor t(h.shape);
    for (int64_t i = 0; i < n; ++i) {
        uint32_t bits = static_cast<uint32_t>(buf[4 * i + 0]) |
                        (static_cast<uint32_t>(buf[4 * i + 1]) << 8) |
                        (static_cast<uint32_t>(buf[4 * i + 2]) << 16) |
                        (static_cast<uint32_t>(buf[4 * i + 3]) << 24);
        float x;
        std::memcpy(&x, &bits, 4);
        t[i] = x;
    }
    return t;
}

std::pair<std::vector<int>, std::vector<uint8_t>> read_u8(const std::string& path,
                                                          const std::vector<int>& expected_shape) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError(IoStatus::io_failure, path + ": cannot open");
    Header h = read_header(f, path);
    if (h.dtype != "u8") throw IoError(IoStatus::bad_header, path + ": expected dtype u8");
    check_expected(h, expected_shape, path);
    int64_t n = shape_product(h.shape);
    auto buf = read_payload(f, n, path);
    return {h.shape, std::vector<uint8_t>(buf.begin(), buf.end())};
}

void write_label_map(const std::string& path, const LabelMap& m) {
    write_u8(path, {m.width, m.height}, m.v);
}

LabelMap read_label_map(const std::string& path) {
    auto [shape, v] = read_u8(path);
    if (shape.size() != 2) throw IoError(IoStatus::bad_header, path + ": label map must be rank 2");
    LabelMap m(shape[0], shape[1]);
    m.v = std::move(v);
    return m;
}

void write_one_hot(const std::string& path, const OneHotMap& m) {
    write_u8(path, {m.width, m.height, m.classes}, m.v);
}

OneHotMap read_one_hot(const std::string& path) {
    auto [shape, v] = read_u8(path);
    if (shape.size() != 3) throw IoError(IoStatus::bad_header, path + ": one-hot map must be rank 3");
    OneHotMap m(shape[0], shape[1], shape[2]);
    m.v = std::move(v);
    return m;
}

void write_weight_map(const std::string& path, const WeightMap& m) {
    Tensor t({m.width, m.height});
    for (int64_t i = 0; i < t.size(); ++i) t[i] = m.v[static_cast<size_t>(i)];
    write_tensor(path, t);
}

WeightMap read_weight_map(const std::string& path) {
    Tensor t = read_tensor(path);
    if (t.rank() != 2) throw IoError(IoStatus::bad_header, path + ": weight map must be rank 2");
    WeightMap m(t.dim(0), t.dim(1));
    for (int64_t i = 0; i < t.size(); ++i) m.v[static_cast<size_t>(i)] = t[i];
    return m;
}

}  // namespace stpg
