// Little-endian byte serialization used by the state-snapshot and
// checkpoint formats.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <vector>

namespace cspw::binio {

inline void put_bytes(std::vector<uint8_t>& out, const void* p, size_t n) {
    const uint8_t* b = static_cast<const uint8_t*>(p);
    out.insert(out.end(), b, b + n);
}

template <typename T>
void put_le(std::vector<uint8_t>& out, T value) {
    static_assert(std::is_integral_v<T>);
    for (size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<uint8_t>(value >> (8 * i)));
    }
}

inline void put_f64(std::vector<uint8_t>& out, double v) {
    put_le(out, std::bit_cast<uint64_t>(v));
}

inline void put_f32(std::vector<uint8_t>& out, float v) {
    put_le(out, std::bit_cast<uint32_t>(v));
}

struct Reader {
    const uint8_t* p;
    size_t n;
    size_t pos = 0;

    void need(size_t k) const {
        if (pos + k > n) throw std::runtime_error("truncated binary payload");
    }

    template <typename T>
    T get_le() {
        static_assert(std::is_integral_v<T>);
        need(sizeof(T));
        T v = 0;
        for (size_t i = 0; i < sizeof(T); ++i) {
            v |= static_cast<T>(static_cast<T>(p[pos + i]) << (8 * i));
        }
        pos += sizeof(T);
        return v;
    }

    double get_f64() { return std::bit_cast<double>(get_le<uint64_t>()); }
    float get_f32() { return std::bit_cast<float>(get_le<uint32_t>()); }

    void get_bytes(void* dst, size_t k) {
        need(k);
        std::memcpy(dst, p + pos, k);
        pos += k;
    }
};

}  // namespace cspw::binio
