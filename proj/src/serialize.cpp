#include "msconv/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace msconv {

namespace {

constexpr char kMagic[4] = {'M', 'S', 'T', '1'};

void put_u64(std::vector<unsigned char>& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

std::uint32_t get_u32(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

void write_file(const Tensor& t, const std::filesystem::path& path, bool f32) {
    std::vector<unsigned char> buf;
    buf.reserve(16 + static_cast<std::size_t>(t.numel()) * (f32 ? 4 : 8));
    buf.insert(buf.end(), kMagic, kMagic + 4);
    buf.push_back(f32 ? 1 : 0);
    buf.push_back(4);
    const Shape4 s = t.shape();
    for (std::int64_t d : {s.n, s.c, s.h, s.w}) put_u64(buf, static_cast<std::uint64_t>(d));
    for (double v : t.data()) {
        if (f32) {
            const std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
            for (int i = 0; i < 4; ++i)
                buf.push_back(static_cast<unsigned char>((bits >> (8 * i)) & 0xff));
        } else {
            put_u64(buf, std::bit_cast<std::uint64_t>(v));
        }
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(IoError::Code::Write, "cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError(IoError::Code::Write, "write failed: " + path.string());
}

} // namespace

void write_tensor(const Tensor& t, const std::filesystem::path& path) {
    write_file(t, path, false);
}

void write_tensor_f32(const Tensor& t, const std::filesystem::path& path) {
    write_file(t, path, true);
}

Tensor read_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(IoError::Code::Open, "cannot open: " + path.string());
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    if (buf.size() < 6) throw IoError(IoError::Code::Truncated, "truncated header: " + path.string());
    if (std::memcmp(buf.data(), kMagic, 4) != 0)
        throw IoError(IoError::Code::BadMagic, "bad magic in " + path.string());
    const unsigned dtype = buf[4];
    if (dtype > 1)
        throw IoError(IoError::Code::UnknownDtype,
                      "unknown dtype " + std::to_string(dtype) + " in " + path.string());
    const unsigned ndim = buf[5];
    if (ndim > 4) throw SchemaError("tensor file has ndim " + std::to_string(ndim) + " > 4");
    if (buf.size() < 6 + 8 * static_cast<std::size_t>(ndim))
        throw IoError(IoError::Code::Truncated, "truncated dims: " + path.string());

    std::int64_t dims[4] = {1, 1, 1, 1};
    for (unsigned i = 0; i < ndim; ++i) {
        const std::uint64_t d = get_u64(buf.data() + 6 + 8 * i);
        if (d > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max()))
            throw SchemaError("dimension overflow in " + path.string());
        dims[4 - ndim + i] = static_cast<std::int64_t>(d);
    }
    const Shape4 shape{dims[0], dims[1], dims[2], dims[3]};
    const std::int64_t count = shape.numel();
    const std::size_t elem = dtype == 0 ? 8 : 4;
    const std::size_t payload_off = 6 + 8 * static_cast<std::size_t>(ndim);
    if (buf.size() != payload_off + static_cast<std::size_t>(count) * elem)
        throw IoError(IoError::Code::Truncated,
                      "payload length mismatch in " + path.string() + ": have " +
                          std::to_string(buf.size() - payload_off) + " bytes, expected " +
                          std::to_string(static_cast<std::size_t>(count) * elem));

    std::vector<double> data(static_cast<std::size_t>(count));
    const unsigned char* p = buf.data() + payload_off;
    for (std::int64_t i = 0; i < count; ++i, p += elem) {
        if (dtype == 0)
            data[static_cast<std::size_t>(i)] = std::bit_cast<double>(get_u64(p));
        else
            data[static_cast<std::size_t>(i)] =
                static_cast<double>(std::bit_cast<float>(get_u32(p)));
    }
    return Tensor::from_data(shape, std::move(data));
}

} // namespace msconv
