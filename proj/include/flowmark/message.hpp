#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "flowmark/common.hpp"
#include "flowmark/rng.hpp"
#include "flowmark/tensor.hpp"

namespace flowmark {

// k-bit watermark payload with its m x m grid view, m = sqrt(k).
// k must be a perfect square; non-square capacities are rejected, not padded.
struct BitMessage {
    std::vector<std::uint8_t> bits;  // each 0 or 1
    int k = 0;
    int m = 0;

    BitMessage() = default;
    explicit BitMessage(std::vector<std::uint8_t> b) : bits(std::move(b)) {
        k = static_cast<int>(bits.size());
        m = grid_side(k);
        for (auto v : bits) require(v == 0 || v == 1, "BitMessage: bits must be 0/1");
    }

    static int grid_side(int k) {
        require(k > 0, "BitMessage: capacity must be positive");
        int m = static_cast<int>(std::lround(std::sqrt(static_cast<double>(k))));
        require(m * m == k, "BitMessage: capacity " + std::to_string(k) +
                                " is not a perfect square");
        return m;
    }

    static BitMessage random(int k, RngStream& rng) {
        std::vector<std::uint8_t> b(static_cast<std::size_t>(k));
        for (auto& v : b) v = rng.bernoulli() ? 1 : 0;
        return BitMessage(std::move(b));
    }

    bool operator==(const BitMessage& o) const { return bits == o.bits; }
};

// bits -> 1 x m x m grid, row-major: grid(0,i,j) = bits[i*m + j].
template <class T = float>
TensorT<T> message_to_grid(const BitMessage& msg) {
    TensorT<T> grid({1, msg.m, msg.m});
    for (int i = 0; i < msg.k; ++i) grid[static_cast<std::size_t>(i)] = static_cast<T>(msg.bits[static_cast<std::size_t>(i)]);
    return grid;
}

// Exact inverse of message_to_grid. Values must be binary.
template <class T>
BitMessage grid_to_message(const TensorT<T>& grid) {
    require(grid.ndim() == 3 && grid.dim(0) == 1, "grid_to_message: expected 1 x m x m grid");
    require(grid.dim(1) == grid.dim(2), "grid_to_message: grid is not square");
    std::vector<std::uint8_t> bits(grid.numel());
    for (std::size_t i = 0; i < grid.numel(); ++i) {
        T v = grid[i];
        require(v == T(0) || v == T(1), "grid_to_message: grid is not binary");
        bits[i] = static_cast<std::uint8_t>(v);
    }
    return BitMessage(std::move(bits));
}

// Fraction of matching bits, in [0,1].
inline double bit_accuracy(const BitMessage& pred, const BitMessage& truth) {
    require(pred.k == truth.k, "bit_accuracy: capacity mismatch (" + std::to_string(pred.k) +
                                   " vs " + std::to_string(truth.k) + ")");
    int match = 0;
    for (int i = 0; i < pred.k; ++i)
        if (pred.bits[static_cast<std::size_t>(i)] == truth.bits[static_cast<std::size_t>(i)]) ++match;
    return static_cast<double>(match) / static_cast<double>(pred.k);
}

// Hex wire format: k/4 chars, row-major bit order, MSB-first per nibble.
// Requires k % 4 == 0 (true for any even grid side; odd-side capacities
// such as k=9 must use the raw bit-string form instead).
inline std::string message_to_hex(const BitMessage& msg) {
    require(msg.k % 4 == 0, "message_to_hex: capacity must be a multiple of 4");
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(static_cast<std::size_t>(msg.k / 4));
    for (int i = 0; i < msg.k; i += 4) {
        int nib = 0;
        for (int j = 0; j < 4; ++j) nib = (nib << 1) | msg.bits[static_cast<std::size_t>(i + j)];
        out.push_back(digits[nib]);
    }
    return out;
}

inline BitMessage message_from_hex(const std::string& hex) {
    std::vector<std::uint8_t> bits;
    bits.reserve(hex.size() * 4);
    for (char c : hex) {
        int nib;
        if (c >= '0' && c <= '9') nib = c - '0';
        else if (c >= 'a' && c <= 'f') nib = 10 + (c - 'a');
        else if (c >= 'A' && c <= 'F') nib = 10 + (c - 'A');
        else throw ContractError(std::string("message_from_hex: invalid hex char '") + c + "'");
        for (int j = 3; j >= 0; --j) bits.push_back(static_cast<std::uint8_t>((nib >> j) & 1));
    }
    return BitMessage(std::move(bits));
}

inline std::string message_to_bitstring(const BitMessage& msg) {
    std::string s;
    s.reserve(static_cast<std::size_t>(msg.k));
    for (auto b : msg.bits) s.push_back(b ? '1' : '0');
    return s;
}

inline BitMessage message_from_bitstring(const std::string& s) {
    std::vector<std::uint8_t> bits;
    bits.reserve(s.size());
    for (char c : s) {
        require(c == '0' || c == '1', "message_from_bitstring: invalid bit char");
        bits.push_back(static_cast<std::uint8_t>(c - '0'));
    }
    return BitMessage(std::move(bits));
}

}  // namespace flowmark
