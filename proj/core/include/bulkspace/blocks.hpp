#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "bulkspace/errors.hpp"

namespace bulkspace {

// Coarse functional role of a parameter block. Estimators can be told to
// skip whole roles (typically embedding and output tables).
enum class BlockRole { norm, attention_like, mlp_like, embedding, output, other };

inline std::string role_name(BlockRole r) {
    switch (r) {
        case BlockRole::norm: return "norm";
        case BlockRole::attention_like: return "attention_like";
        case BlockRole::mlp_like: return "mlp_like";
        case BlockRole::embedding: return "embedding";
        case BlockRole::output: return "output";
        default: return "other";
    }
}

inline BlockRole role_from_name(const std::string& s) {
    if (s == "norm") return BlockRole::norm;
    if (s == "attention_like") return BlockRole::attention_like;
    if (s == "mlp_like") return BlockRole::mlp_like;
    if (s == "embedding") return BlockRole::embedding;
    if (s == "output") return BlockRole::output;
    if (s == "other") return BlockRole::other;
    throw ValidationError("unknown block role '" + s + "'");
}

struct Block {
    std::size_t id = 0;
    std::string name;
    std::size_t begin = 0; // [begin, end) into the flat parameter vector
    std::size_t end = 0;
    BlockRole role = BlockRole::other;

    std::size_t size() const { return end - begin; }
};

// Ordered, contiguous, non-overlapping cover of [0, total).
class BlockPartition {
public:
    BlockPartition() = default;
    explicit BlockPartition(std::vector<Block> blocks) : blocks_(std::move(blocks)) {
        std::size_t cursor = 0;
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            const Block& b = blocks_[i];
            if (b.id != i) throw ValidationError("BlockPartition: block ids must be 0..n-1 in order");
            if (b.begin != cursor || b.end < b.begin)
                throw ValidationError("BlockPartition: blocks must tile the parameter vector");
            if (b.size() == 0) throw ValidationError("BlockPartition: empty block '" + b.name + "'");
            cursor = b.end;
        }
        total_ = cursor;
    }

    static BlockPartition single(std::size_t total, BlockRole role = BlockRole::other) {
        Block b;
        b.id = 0;
        b.name = "params";
        b.begin = 0;
        b.end = total;
        b.role = role;
        return BlockPartition({b});
    }

    std::size_t num_blocks() const { return blocks_.size(); }
    std::size_t total() const { return total_; }
    const Block& block(std::size_t i) const { return blocks_.at(i); }
    const std::vector<Block>& blocks() const { return blocks_; }

private:
    std::vector<Block> blocks_;
    std::size_t total_ = 0;
};

} // namespace bulkspace
