#include "stlm/audit.hpp"

#include <array>
#include <cstdio>

#include "json.hpp"
#include "stlm/model.hpp"

namespace stlm {

namespace {

constexpr std::array<const char*, 8> kComponents = {
    "embedding", "positional", "attention", "ffn",
    "norms",     "head",       "bytepool_embedder", "bytepool_decoder"};

std::string two_decimals(double pct) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", pct);
    return buf;
}

} // namespace

std::string component_of(const std::string& name) {
    if (name.rfind("pool.", 0) == 0) return "bytepool_embedder";
    if (name.rfind("dec.", 0) == 0) return "bytepool_decoder";
    if (name == "embed.tok") return "embedding";
    if (name == "embed.pos") return "positional";
    if (name.size() >= 9 && name.compare(name.size() - 9, 9, "norm.gain") == 0) return "norms";
    if (name.find(".attn.") != std::string::npos) return "attention";
    if (name.find(".ffn.") != std::string::npos) return "ffn";
    if (name == "head.w") return "head";
    throw ConfigError("unclassified parameter name " + name);
}

Index AuditReport::component(const std::string& name) const {
    for (const auto& [component_name, count] : components)
        if (component_name == name) return count;
    throw ConfigError("unknown audit component " + name);
}

AuditReport count_params(const ModelConfig& cfg, const BytePoolConfig& bp) {
    AuditReport report;
    for (const char* c : kComponents) report.components.emplace_back(c, 0);

    for (const auto& [name, shape] : enumerate_param_shapes(cfg, bp)) {
        const Index count = shape_numel(shape);
        report.entries.push_back({name, shape, count});
        report.total += count;
        const std::string bucket = component_of(name);
        for (auto& [component_name, component_count] : report.components)
            if (component_name == bucket) component_count += count;
    }

    report.embedding_share =
        report.total == 0 ? 0.0
                          : static_cast<double>(report.component("embedding")) /
                                static_cast<double>(report.total);

    if (cfg.embedder == Embedder::byte_pool) {
        const double bytepool_params = static_cast<double>(report.component("bytepool_embedder") +
                                                           report.component("bytepool_decoder"));
        const double tied = static_cast<double>(cfg.vocab_size) * cfg.hidden_dim;
        report.reduction_vs_tied = 1.0 - bytepool_params / tied;
        report.reduction_vs_untied = 1.0 - bytepool_params / (2.0 * tied);
    }
    return report;
}

std::string render_report(const AuditReport& report, ReportFormat format) {
    if (format == ReportFormat::json) {
        nlohmann::json j;
        j["tensors"] = nlohmann::json::array();
        for (const auto& e : report.entries) {
            nlohmann::json t;
            t["name"] = e.name;
            t["shape"] = e.shape;
            t["count"] = e.count;
            j["tensors"].push_back(t);
        }
        j["components"] = nlohmann::json::object();
        for (const auto& [name, count] : report.components) j["components"][name] = count;
        j["total"] = report.total;
        j["embedding_share_pct"] = two_decimals(100.0 * report.embedding_share);
        if (report.reduction_vs_tied)
            j["reduction_vs_tied_pct"] = two_decimals(100.0 * *report.reduction_vs_tied);
        if (report.reduction_vs_untied)
            j["reduction_vs_untied_pct"] = two_decimals(100.0 * *report.reduction_vs_untied);
        return j.dump(2) + "\n";
    }

    std::string out = "parameter audit\n";
    char line[160];
    for (const auto& e : report.entries) {
        std::snprintf(line, sizeof(line), "  %-32s %-14s %12lld\n", e.name.c_str(),
                      shape_str(e.shape).c_str(), static_cast<long long>(e.count));
        out += line;
    }
    out += "component subtotals\n";
    for (const auto& [name, count] : report.components) {
        if (count == 0) continue;
        const double share = report.total ? 100.0 * static_cast<double>(count) /
                                                static_cast<double>(report.total)
                                          : 0.0;
        std::snprintf(line, sizeof(line), "  %-20s %12lld  %6s%%\n", name.c_str(),
                      static_cast<long long>(count), two_decimals(share).c_str());
        out += line;
    }
    std::snprintf(line, sizeof(line), "  %-20s %12lld\n", "total",
                  static_cast<long long>(report.total));
    out += line;
    std::snprintf(line, sizeof(line), "embedding share: %s%%\n",
                  two_decimals(100.0 * report.embedding_share).c_str());
    out += line;
    if (report.reduction_vs_tied) {
        std::snprintf(line, sizeof(line), "reduction vs tied embedding+head: %s%%\n",
                      two_decimals(100.0 * *report.reduction_vs_tied).c_str());
        out += line;
    }
    if (report.reduction_vs_untied) {
        std::snprintf(line, sizeof(line), "reduction vs untied embedding+head: %s%%\n",
                      two_decimals(100.0 * *report.reduction_vs_untied).c_str());
        out += line;
    }
    return out;
}

} // namespace stlm
