#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stlm/config.hpp"
#include "stlm/tensor.hpp"

namespace stlm {

// Exact parameter accounting. Counts come from closed-form shape
// enumeration over the config; aliased (tied) storage appears once under
// its canonical name.
struct AuditReport {
    struct Entry {
        std::string name;
        Shape shape;
        Index count{0};
    };

    std::vector<Entry> entries;
    // fixed order: embedding, positional, attention, ffn, norms, head,
    // bytepool_embedder, bytepool_decoder
    std::vector<std::pair<std::string, Index>> components;
    Index total{0};
    double embedding_share{0.0};
    // byte_pool only: reduction of (embedder + decoder) vs a tied or
    // untied vocab x hidden embedding/head pair
    std::optional<double> reduction_vs_tied;
    std::optional<double> reduction_vs_untied;

    Index component(const std::string& name) const;
};

AuditReport count_params(const ModelConfig& cfg, const BytePoolConfig& bp = {});

// Component bucket for a canonical parameter name.
std::string component_of(const std::string& name);

enum class ReportFormat { text, json };
std::string render_report(const AuditReport& report, ReportFormat format);

} // namespace stlm
