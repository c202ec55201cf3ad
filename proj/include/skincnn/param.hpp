#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "skincnn/common.hpp"
#include "skincnn/tensor.hpp"

namespace skincnn {

enum class Group : std::uint8_t {
    seg = 0,
    backbone_full = 1,
    backbone_crop = 2,
    head = 3,
};

inline const char* group_name(Group g)
{
    switch (g) {
    case Group::seg: return "seg";
    case Group::backbone_full: return "backbone_full";
    case Group::backbone_crop: return "backbone_crop";
    case Group::head: return "head";
    }
    return "?";
}

template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> tensor;
    Group group = Group::seg;
    bool trainable = true;
};

template <typename T>
void check_unique_names(const std::vector<Parameter<T>>& params)
{
    std::unordered_set<std::string> seen;
    for (const auto& p : params)
        SKINCNN_CHECK(seen.insert(p.name).second, "duplicate parameter name: ", p.name);
}

template <typename T>
Parameter<T>* find_param(std::vector<Parameter<T>>& params, const std::string& name)
{
    for (auto& p : params)
        if (p.name == name)
            return &p;
    return nullptr;
}

// Trainability and gradient tracking are always toggled together.
template <typename T>
void set_trainable(Parameter<T>& p, bool v)
{
    p.trainable = v;
    p.tensor.set_requires_grad(v);
}

// Binary checkpoint layout, all integers little-endian:
//   "SKCN" | version u32 = 1 | tensor_count u32
//   per tensor: name_len u16 | name bytes | group u8 | ndim u8 | dims u32 each
//               | dtype u8 = 0 (f32) | values f32 row-major
struct CheckpointTensor {
    std::string name;
    Group group = Group::seg;
    Shape shape;
    std::vector<float> values;
};

using Checkpoint = std::vector<CheckpointTensor>;

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v)
{
    out.push_back(char(v & 0xFF));
    out.push_back(char(v >> 8));
}

inline void put_u32(std::string& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        out.push_back(char((v >> (8 * i)) & 0xFF));
}

struct ByteReader {
    const std::uint8_t* data;
    std::size_t size, pos = 0;

    void need(std::size_t n) const
    {
        SKINCNN_CHECK(pos + n <= size, "checkpoint: truncated at byte ", pos);
    }
    std::uint8_t u8()
    {
        need(1);
        return data[pos++];
    }
    std::uint16_t u16()
    {
        need(2);
        std::uint16_t v = std::uint16_t(data[pos]) | std::uint16_t(data[pos + 1]) << 8;
        pos += 2;
        return v;
    }
    std::uint32_t u32()
    {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= std::uint32_t(data[pos + std::size_t(i)]) << (8 * i);
        pos += 4;
        return v;
    }
};

} // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ckpt)
{
    std::string out = "SKCN";
    detail::put_u32(out, 1);
    detail::put_u32(out, std::uint32_t(ckpt.size()));
    for (const auto& t : ckpt) {
        SKINCNN_CHECK(t.name.size() <= 0xFFFF, "checkpoint: name too long: ", t.name);
        SKINCNN_CHECK(t.values.size() == shape_size(t.shape), "checkpoint: ", t.name,
                      " has ", t.values.size(), " values for shape ", shape_str(t.shape));
        detail::put_u16(out, std::uint16_t(t.name.size()));
        out += t.name;
        out.push_back(char(t.group));
        out.push_back(char(t.shape.size()));
        for (std::size_t d : t.shape)
            detail::put_u32(out, std::uint32_t(d));
        out.push_back(0); // dtype f32
        for (float v : t.values) {
            std::uint32_t bits;
            static_assert(sizeof(bits) == sizeof(v));
            std::memcpy(&bits, &v, 4);
            detail::put_u32(out, bits);
        }
    }
    return out;
}

inline Checkpoint parse_checkpoint(const std::uint8_t* data, std::size_t size)
{
    detail::ByteReader r{data, size};
    r.need(4);
    SKINCNN_CHECK(std::memcmp(data, "SKCN", 4) == 0, "checkpoint: bad magic");
    r.pos = 4;
    const std::uint32_t version = r.u32();
    SKINCNN_CHECK(version == 1, "checkpoint: unsupported version ", version);
    const std::uint32_t count = r.u32();
    Checkpoint ckpt;
    ckpt.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointTensor t;
        const std::uint16_t name_len = r.u16();
        r.need(name_len);
        t.name.assign(reinterpret_cast<const char*>(data + r.pos), name_len);
        r.pos += name_len;
        const std::uint8_t g = r.u8();
        SKINCNN_CHECK(g <= 3, "checkpoint: bad group code ", int(g), " for ", t.name);
        t.group = Group(g);
        const std::uint8_t ndim = r.u8();
        t.shape.resize(ndim);
        for (std::uint8_t d = 0; d < ndim; ++d)
            t.shape[d] = r.u32();
        const std::uint8_t dtype = r.u8();
        SKINCNN_CHECK(dtype == 0, "checkpoint: unsupported dtype ", int(dtype), " for ", t.name);
        const std::size_t n = shape_size(t.shape);
        t.values.resize(n);
        for (std::size_t v = 0; v < n; ++v) {
            const std::uint32_t bits = r.u32();
            std::memcpy(&t.values[v], &bits, 4);
        }
        ckpt.push_back(std::move(t));
    }
    return ckpt;
}

template <typename T>
Checkpoint checkpoint_from_params(const std::vector<Parameter<T>>& params)
{
    Checkpoint ckpt;
    ckpt.reserve(params.size());
    for (const auto& p : params) {
        CheckpointTensor t{p.name, p.group, p.tensor.shape(), {}};
        t.values.resize(p.tensor.size());
        for (std::size_t i = 0; i < t.values.size(); ++i)
            t.values[i] = float(p.tensor.data()[i]);
        ckpt.push_back(std::move(t));
    }
    return ckpt;
}

template <typename T>
void save_checkpoint(const std::string& path, const std::vector<Parameter<T>>& params)
{
    const std::string bytes = serialize_checkpoint(checkpoint_from_params(params));
    std::ofstream out(path, std::ios::binary);
    SKINCNN_CHECK(out, "cannot open checkpoint for writing: ", path);
    out.write(bytes.data(), std::streamsize(bytes.size()));
    SKINCNN_CHECK(out, "checkpoint write failed: ", path);
}

inline Checkpoint load_checkpoint(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    SKINCNN_CHECK(in, "cannot open checkpoint: ", path);
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    return parse_checkpoint(data.data(), data.size());
}

// Overwrites matching names in params; every checkpoint tensor must find its
// parameter and match its shape.
template <typename T>
void assign_from_checkpoint(std::vector<Parameter<T>>& params, const Checkpoint& ckpt)
{
    for (const auto& t : ckpt) {
        Parameter<T>* p = find_param(params, t.name);
        SKINCNN_CHECK(p, "checkpoint tensor has no matching parameter: ", t.name);
        SKINCNN_CHECK(p->tensor.shape() == t.shape, "checkpoint shape mismatch for ", t.name,
                      ": file ", shape_str(t.shape), " vs model ", shape_str(p->tensor.shape()));
        for (std::size_t i = 0; i < t.values.size(); ++i)
            p->tensor.data()[i] = T(t.values[i]);
    }
}

} // namespace skincnn
