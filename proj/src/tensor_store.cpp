#include "cbmfix/tensor_store.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace cbmfix {

namespace fs = std::filesystem;
using nlohmann::json;

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) {
        throw DimensionError("Matrix: data length " + std::to_string(data_.size()) +
                             " != " + std::to_string(rows) + "x" + std::to_string(cols));
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

bool Matrix::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

bool bit_equal(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    if (a.size() == 0) return true;
    return std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                             " * " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto orow = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            auto brow = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw DimensionError("matmul_bt: inner dims " + std::to_string(a.cols()) + " vs " +
                             std::to_string(b.cols()));
    }
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto arow = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(arow, b.row(j));
    }
    return out;
}

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
    return t;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double frobenius_norm(const Matrix& m) { return l2_norm(m.data()); }

Matrix select_rows(const Matrix& m, std::span<const std::size_t> rows) {
    Matrix out(rows.size(), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= m.rows()) throw DimensionError("select_rows: row index out of range");
        std::copy_n(m.row(rows[i]).begin(), m.cols(), out.row(i).begin());
    }
    return out;
}

Matrix select_cols(const Matrix& m, std::span<const std::size_t> cols) {
    Matrix out(m.rows(), cols.size());
    for (std::size_t j = 0; j < cols.size(); ++j)
        if (cols[j] >= m.cols()) throw DimensionError("select_cols: column index out of range");
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = m(i, cols[j]);
    return out;
}

Matrix row_matrix(std::span<const double> v) {
    return Matrix(1, v.size(), std::vector<double>(v.begin(), v.end()));
}

Matrix row_l2_normalize(const Matrix& m) {
    Matrix out = m;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto r = out.row(i);
        const double norm = l2_norm(r);
        if (norm == 0.0) continue;
        for (double& v : r) v /= norm;
    }
    return out;
}

// ---------------------------------------------------------------------------

fs::path sidecar_path(const fs::path& payload) {
    fs::path p = payload;
    p += ".json";
    return p;
}

std::uint32_t crc32(std::span<const unsigned char> bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks for payloads above 4 GiB.
    std::size_t offset = 0;
    while (offset < bytes.size()) {
        const std::size_t chunk = std::min<std::size_t>(bytes.size() - offset, 1u << 30);
        crc = ::crc32(crc, bytes.data() + offset, static_cast<uInt>(chunk));
        offset += chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

namespace {

std::vector<unsigned char> encode_payload(const Matrix& m) {
    std::vector<unsigned char> bytes(m.size() * sizeof(double));
    if (bytes.empty()) return bytes;
    std::memcpy(bytes.data(), m.data().data(), bytes.size());
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < bytes.size(); i += 8) std::reverse(bytes.begin() + i, bytes.begin() + i + 8);
    }
    return bytes;
}

std::vector<double> decode_payload(std::vector<unsigned char> bytes) {
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < bytes.size(); i += 8) std::reverse(bytes.begin() + i, bytes.begin() + i + 8);
    }
    std::vector<double> values(bytes.size() / sizeof(double));
    if (!values.empty()) std::memcpy(values.data(), bytes.data(), bytes.size());
    return values;
}

std::vector<unsigned char> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed: " + path.string());
    return bytes;
}

void write_bytes(const fs::path& path, std::span<const unsigned char> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

void save_matrix(const Matrix& m, const fs::path& path) {
    if (!m.all_finite()) throw InvalidArgument("refusing to save non-finite matrix to " + path.string());
    const auto bytes = encode_payload(m);
    json header = {
        {"name", path.stem().string()},
        {"rows", m.rows()},
        {"cols", m.cols()},
        {"dtype", "f64"},
        {"endianness", "little"},
        {"checksum", crc32(bytes)},
    };
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_bytes(path, bytes);
    write_text(sidecar_path(path), header.dump(2) + "\n");
}

Matrix load_matrix(const fs::path& path) {
    json header;
    try {
        header = json::parse(read_text(sidecar_path(path)));
    } catch (const json::exception& e) {
        throw FormatError("bad sidecar for " + path.string() + ": " + e.what());
    }
    std::size_t rows = 0, cols = 0;
    std::uint32_t checksum = 0;
    try {
        if (header.at("dtype") != "f64") throw FormatError("unsupported dtype in " + path.string());
        if (header.at("endianness") != "little") throw FormatError("unsupported endianness in " + path.string());
        rows = header.at("rows").get<std::size_t>();
        cols = header.at("cols").get<std::size_t>();
        checksum = header.at("checksum").get<std::uint32_t>();
    } catch (const json::exception& e) {
        throw FormatError("bad sidecar for " + path.string() + ": " + e.what());
    }
    auto bytes = read_bytes(path);
    if (bytes.size() != rows * cols * sizeof(double)) {
        throw FormatError("dim mismatch in " + path.string() + ": sidecar says " + std::to_string(rows) + "x" +
                          std::to_string(cols) + ", payload has " + std::to_string(bytes.size()) + " bytes");
    }
    if (crc32(bytes) != checksum) throw FormatError("checksum mismatch in " + path.string());
    Matrix m(rows, cols, decode_payload(std::move(bytes)));
    if (!m.all_finite()) throw FormatError("non-finite value in " + path.string());
    return m;
}

void save_labels(std::span<const int> labels, const fs::path& path) {
    std::ostringstream out;
    out << "index,label\n";
    for (std::size_t i = 0; i < labels.size(); ++i) out << i << ',' << labels[i] << '\n';
    write_text(path, out.str());
}

std::vector<int> load_labels(const fs::path& path) {
    std::istringstream in(read_text(path));
    std::vector<int> labels;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line_no == 1 && line.rfind("index", 0) == 0) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected index,label");
        try {
            const auto index = std::stoul(line.substr(0, comma));
            if (index != labels.size()) throw FormatError(path.string() + ": indices must be 0..N-1 in order");
            labels.push_back(std::stoi(line.substr(comma + 1)));
        } catch (const std::logic_error&) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": not an integer");
        }
    }
    return labels;
}

void save_lines(std::span<const std::string> lines, const fs::path& path) {
    std::string text;
    for (const auto& l : lines) {
        if (l.find('\n') != std::string::npos) throw InvalidArgument("concept text contains a newline: " + l);
        text += l;
        text += '\n';
    }
    write_text(path, text);
}

std::vector<std::string> load_lines(const fs::path& path) {
    std::istringstream in(read_text(path));
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_bytes(path, std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

std::string read_text(const fs::path& path) {
    const auto bytes = read_bytes(path);
    return std::string(bytes.begin(), bytes.end());
}

}  // namespace cbmfix
