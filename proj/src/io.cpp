#include "micloc/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "micloc/error.hpp"

namespace micloc {

using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

constexpr int csm_version = 1;

std::string to_hex(const unsigned char* bytes, std::size_t n)
{
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(2 * n, '0');
    for (std::size_t i = 0; i < n; ++i) {
        out[2 * i] = digits[bytes[i] >> 4];
        out[2 * i + 1] = digits[bytes[i] & 0xF];
    }
    return out;
}

void from_hex(const std::string& text, unsigned char* bytes, std::size_t n)
{
    if (text.size() != 2 * n)
        fail(ErrorCode::format, "CSM payload has " + std::to_string(text.size()) + " hex digits, expected " +
                                    std::to_string(2 * n));
    for (std::size_t i = 0; i < n; ++i) {
        unsigned v = 0;
        const auto* first = text.data() + 2 * i;
        auto [ptr, ec] = std::from_chars(first, first + 2, v, 16);
        if (ec != std::errc{} || ptr != first + 2) fail(ErrorCode::format, "CSM payload is not valid hex");
        bytes[i] = static_cast<unsigned char>(v);
    }
}

json header_of(const SpectralMatrix& csm, const char* encoding)
{
    return json{{"format", "micloc-csm"},
                {"version", csm_version},
                {"m", csm.m()},
                {"frequency_hz", csm.frequency},
                {"encoding", encoding}};
}

std::string format_double(double v)
{
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

} // namespace

void write_csm(std::ostream& out, const SpectralMatrix& csm, CsmEncoding encoding)
{
    const std::size_t m = csm.m();
    if (encoding == CsmEncoding::json) {
        json doc = header_of(csm, "json");
        json entries = json::array();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j) {
                const auto c = csm.entries(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
                entries.push_back({c.real(), c.imag()});
            }
        doc["entries"] = std::move(entries);
        out << doc.dump() << '\n';
        return;
    }
    std::vector<double> payload;
    payload.reserve(2 * m * m);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            const auto c = csm.entries(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            payload.push_back(c.real());
            payload.push_back(c.imag());
        }
    out << header_of(csm, "hex").dump() << '\n'
        << to_hex(reinterpret_cast<const unsigned char*>(payload.data()), payload.size() * sizeof(double)) << '\n';
}

SpectralMatrix read_csm(std::istream& in)
{
    std::string line;
    if (!std::getline(in, line)) fail(ErrorCode::format, "CSM file is empty");
    json header;
    try {
        header = json::parse(line);
    } catch (const json::exception& e) {
        fail(ErrorCode::format, std::string("CSM header is not valid JSON: ") + e.what());
    }
    try {
        if (header.value("format", std::string()) != "micloc-csm") fail(ErrorCode::format, "not a micloc CSM file");
        if (header.at("version").get<int>() != csm_version)
            fail(ErrorCode::format, "unsupported CSM version " + header.at("version").dump());
        const auto m = header.at("m").get<std::size_t>();
        if (m == 0) fail(ErrorCode::format, "CSM file declares m = 0");
        SpectralMatrix csm;
        csm.frequency = header.at("frequency_hz").get<double>();
        csm.entries.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
        const auto encoding = header.at("encoding").get<std::string>();
        std::vector<double> payload(2 * m * m);
        if (encoding == "hex") {
            std::string hex;
            if (!std::getline(in, hex)) fail(ErrorCode::format, "CSM payload line missing");
            from_hex(hex, reinterpret_cast<unsigned char*>(payload.data()), payload.size() * sizeof(double));
        } else if (encoding == "json") {
            const auto& entries = header.at("entries");
            if (entries.size() != m * m)
                fail(ErrorCode::format, "CSM has " + std::to_string(entries.size()) + " entries, expected " +
                                            std::to_string(m * m));
            for (std::size_t i = 0; i < m * m; ++i) {
                payload[2 * i] = entries[i].at(0).get<double>();
                payload[2 * i + 1] = entries[i].at(1).get<double>();
            }
        } else {
            fail(ErrorCode::format, "unknown CSM encoding '" + encoding + "'");
        }
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j) {
                const std::size_t k = i * m + j;
                csm.entries(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = {payload[2 * k], payload[2 * k + 1]};
            }
        return csm;
    } catch (const json::exception& e) {
        fail(ErrorCode::format, std::string("malformed CSM header: ") + e.what());
    }
}

void save_csm(const std::filesystem::path& path, const SpectralMatrix& csm, CsmEncoding encoding)
{
    std::ofstream out(path);
    if (!out) fail(ErrorCode::io, "cannot write CSM file " + path.string());
    write_csm(out, csm, encoding);
    if (!out) fail(ErrorCode::io, "failed writing CSM file " + path.string());
}

SpectralMatrix load_csm(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) fail(ErrorCode::file_not_found, "cannot open CSM file " + path.string());
    return read_csm(in);
}

void save_map_csv(const std::filesystem::path& path, const ScanGrid& grid, std::span<const double> values)
{
    if (values.size() != grid.size())
        fail(ErrorCode::dimension_mismatch, "map has " + std::to_string(values.size()) + " values for a grid of " +
                                                std::to_string(grid.size()));
    std::ofstream out(path);
    if (!out) fail(ErrorCode::io, "cannot write map file " + path.string());
    out << "index,x_m,y_m,value\n";
    for (std::size_t i = 0; i < values.size(); ++i) {
        const Point3 p = grid.point(i);
        out << i << ',' << format_double(p.x()) << ',' << format_double(p.y()) << ',' << format_double(values[i]) << '\n';
    }
    if (!out) fail(ErrorCode::io, "failed writing map file " + path.string());
}

std::vector<double> load_map_csv(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) fail(ErrorCode::file_not_found, "cannot open map file " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "index,x_m,y_m,value")
        fail(ErrorCode::format, path.string() + " lacks the map CSV header");
    std::vector<double> values;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto last = line.rfind(',');
        std::size_t index = 0;
        const auto [p, ec] = std::from_chars(line.data(), line.data() + line.size(), index);
        if (std::count(line.begin(), line.end(), ',') != 3 || ec != std::errc{} || *p != ',' ||
            index != values.size())
            fail(ErrorCode::format, "map CSV line " + std::to_string(lineno) + " is malformed");
        double v = 0.0;
        const auto [q, ec2] = std::from_chars(line.data() + last + 1, line.data() + line.size(), v);
        if (ec2 != std::errc{} || q != line.data() + line.size())
            fail(ErrorCode::format, "map CSV line " + std::to_string(lineno) + " has a bad value");
        values.push_back(v);
    }
    return values;
}

void save_map_pgm(const std::filesystem::path& path, const ScanGrid& grid, std::span<const double> values)
{
    if (values.size() != grid.size()) fail(ErrorCode::dimension_mismatch, "map size does not match the grid");
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    const double vmin = *lo, vmax = *hi;
    const std::size_t n = grid.n_per_side();
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::io, "cannot write PGM file " + path.string());
    out << "P5\n# micloc min=" << format_double(vmin) << " max=" << format_double(vmax) << '\n'
        << n << ' ' << n << "\n255\n";
    // Image rows run top to bottom, i.e. from the largest y downward.
    for (std::size_t r = n; r-- > 0;)
        for (std::size_t c = 0; c < n; ++c) {
            const double v = values[r * n + c];
            const double scaled = vmax > vmin ? 255.0 * (v - vmin) / (vmax - vmin) : 0.0;
            out.put(static_cast<char>(static_cast<unsigned char>(std::lround(scaled))));
        }
    if (!out) fail(ErrorCode::io, "failed writing PGM file " + path.string());
}

namespace {

constexpr char prop_magic[4] = {'M', 'L', 'P', 'M'};
constexpr std::uint32_t prop_version = 1;

template <typename V>
void put(std::ostream& out, V v)
{
    out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& in)
{
    V v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(V))) fail(ErrorCode::format, "propagation matrix file truncated");
    return v;
}

} // namespace

void save_propagation_matrix(const std::filesystem::path& path, const PropagationMatrix& a, const PropagationFileInfo& info)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::io, "cannot write propagation matrix " + path.string());
    const std::size_t s = a.size();
    out.write(prop_magic, 4);
    put<std::uint32_t>(out, prop_version);
    put<std::uint64_t>(out, s);
    put<double>(out, a.frequency);
    put<double>(out, info.c0);
    put<std::uint64_t>(out, info.array_fingerprint);
    put<double>(out, info.z0);
    put<double>(out, info.alpha);
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = a.entries;
    out.write(reinterpret_cast<const char*>(rows.data()), static_cast<std::streamsize>(s * s * sizeof(double)));
    if (!out) fail(ErrorCode::io, "failed writing propagation matrix " + path.string());
}

PropagationMatrix load_propagation_matrix(const std::filesystem::path& path, PropagationFileInfo* info)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::file_not_found, "cannot open propagation matrix " + path.string());
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, prop_magic, 4) != 0)
        fail(ErrorCode::format, path.string() + " is not a propagation matrix file");
    if (get<std::uint32_t>(in) != prop_version) fail(ErrorCode::format, "unsupported propagation matrix version");
    const auto s = get<std::uint64_t>(in);
    PropagationMatrix a;
    a.frequency = get<double>(in);
    PropagationFileInfo meta;
    meta.c0 = get<double>(in);
    meta.array_fingerprint = get<std::uint64_t>(in);
    meta.z0 = get<double>(in);
    meta.alpha = get<double>(in);
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows(static_cast<Eigen::Index>(s),
                                                                                static_cast<Eigen::Index>(s));
    if (!in.read(reinterpret_cast<char*>(rows.data()), static_cast<std::streamsize>(s * s * sizeof(double))))
        fail(ErrorCode::format, "propagation matrix payload truncated");
    if (in.peek() != std::char_traits<char>::eof()) fail(ErrorCode::format, "trailing bytes in propagation matrix file");
    a.entries = rows;
    if (info) *info = meta;
    return a;
}

} // namespace micloc
