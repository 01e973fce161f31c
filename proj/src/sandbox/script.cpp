#include "honeytrace/sandbox/script.hpp"

#include <charconv>

#include "honeytrace/common/fileio.hpp"
#include "honeytrace/common/lexer.hpp"

namespace honeytrace::sandbox {

namespace {

struct Parser {
    const std::string& source;
    const std::filesystem::path& base_dir;
    std::size_t line = 0;

    [[noreturn]] void fail(const std::string& what) const { throw ParseError(source, line, what); }

    ByteArg bytes(const Token& t) const {
        ByteArg arg;
        if (t.quoted) {
            arg.bytes = to_bytes(t.text);
        } else if (t.text.starts_with("hex:")) {
            const auto hex = std::string_view(t.text).substr(4);
            if (hex.size() % 2) fail("odd hex length");
            for (std::size_t i = 0; i < hex.size(); i += 2) {
                std::uint8_t b = 0;
                const auto [p, ec] = std::from_chars(hex.data() + i, hex.data() + i + 2, b, 16);
                if (ec != std::errc{} || p != hex.data() + i + 2) fail("bad hex in " + t.text);
                arg.bytes.push_back(b);
            }
        } else if (t.text.starts_with("file:")) {
            const auto p = base_dir / t.text.substr(5);
            try {
                arg.bytes = read_file(p);
            } catch (const Error& e) {
                fail(e.what());
            }
        } else if (t.text.starts_with("env:")) {
            arg.env_path = t.text.substr(4);
            if (arg.env_path.empty()) fail("empty env: path");
        } else {
            arg.bytes = to_bytes(t.text);
        }
        return arg;
    }

    std::uint64_t number(const Token& t) const {
        std::string_view s = t.text;
        int base = 10;
        if (s.starts_with("0x") || s.starts_with("0X")) {
            s.remove_prefix(2);
            base = 16;
        }
        std::uint64_t v = 0;
        const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
        if (s.empty() || ec != std::errc{} || p != s.data() + s.size()) fail("bad number '" + t.text + "'");
        return v;
    }

    void arity(const std::vector<Token>& toks, std::size_t lo, std::size_t hi) const {
        if (toks.size() < lo || toks.size() > hi) fail("wrong number of arguments for '" + toks[0].text + "'");
    }
};

}  // namespace

std::string_view to_string(StepKind k) {
    switch (k) {
        case StepKind::send: return "send";
        case StepKind::expect: return "expect";
        case StepKind::exec: return "exec";
        case StepKind::write_file: return "write_file";
        case StepKind::delete_file: return "delete_file";
        case StepKind::connect_out: return "connect_out";
        case StepKind::sleep: return "sleep";
        case StepKind::trace: return "trace";
    }
    return "?";
}

AttackScript AttackScript::parse(std::string_view text, const std::string& source,
                                 const std::filesystem::path& base_dir) {
    AttackScript script;
    script.name = source;
    Parser p{source, base_dir};
    Step* open_trace = nullptr;

    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        const auto raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++p.line;

        std::vector<Token> toks;
        try {
            toks = tokenize_line(raw);
        } catch (const Error& e) {
            p.fail(e.what());
        }
        if (toks.empty()) continue;
        const auto& kw = toks[0].text;

        if (open_trace) {
            TraceOp op;
            if (kw == "end") {
                p.arity(toks, 1, 1);
                open_trace = nullptr;
                continue;
            } else if (kw == "insn") {
                p.arity(toks, 3, 3);
                op.kind = tracer::TraceKind::instruction;
                op.address = p.number(toks[1]);
                op.detail = toks[2].text;
            } else if (kw == "read") {
                p.arity(toks, 3, 3);
                op.kind = tracer::TraceKind::mem_read;
                op.address = p.number(toks[1]);
                op.size = static_cast<std::uint32_t>(p.number(toks[2]));
            } else if (kw == "write") {
                p.arity(toks, 3, 3);
                op.kind = tracer::TraceKind::mem_write;
                op.address = p.number(toks[1]);
                const auto arg = p.bytes(toks[2]);
                if (arg.from_env()) p.fail("env: is not allowed inside a trace block");
                op.data = arg.bytes;
                op.size = static_cast<std::uint32_t>(op.data.size());
            } else {
                p.fail("unknown trace operation '" + kw + "' (missing 'end'?)");
            }
            open_trace->trace.push_back(std::move(op));
            continue;
        }

        Step step;
        step.line = p.line;
        if (kw == "send" || kw == "expect") {
            p.arity(toks, 2, 2);
            step.kind = kw == "send" ? StepKind::send : StepKind::expect;
            step.bytes = p.bytes(toks[1]);
        } else if (kw == "exec") {
            if (toks.size() < 2) p.fail("exec needs a command line");
            step.kind = StepKind::exec;
            for (std::size_t i = 1; i < toks.size(); ++i) {
                if (i > 1) step.command_line += ' ';
                step.command_line += toks[i].text;
            }
        } else if (kw == "write_file") {
            p.arity(toks, 3, 3);
            step.kind = StepKind::write_file;
            step.path = toks[1].text;
            step.bytes = p.bytes(toks[2]);
        } else if (kw == "delete_file") {
            p.arity(toks, 2, 2);
            step.kind = StepKind::delete_file;
            step.path = toks[1].text;
        } else if (kw == "connect_out") {
            p.arity(toks, 3, 4);
            step.kind = StepKind::connect_out;
            const auto dest = Endpoint::parse(toks[1].text);
            if (!dest) p.fail("bad destination '" + toks[1].text + "'");
            step.destination = *dest;
            step.bytes = p.bytes(toks[2]);
            if (toks.size() == 4) step.reply = p.bytes(toks[3]);
        } else if (kw == "sleep") {
            p.arity(toks, 2, 2);
            step.kind = StepKind::sleep;
            step.duration = std::chrono::milliseconds(p.number(toks[1]));
        } else if (kw == "trace") {
            p.arity(toks, 1, 1);
            step.kind = StepKind::trace;
        } else {
            p.fail("unknown step '" + kw + "'");
        }
        script.steps.push_back(std::move(step));
        if (script.steps.back().kind == StepKind::trace) open_trace = &script.steps.back();
    }
    if (open_trace) throw ParseError(source, open_trace->line, "trace block without 'end'");
    return script;
}

AttackScript AttackScript::load(const std::filesystem::path& path) {
    return parse(read_text(path), path.string(), path.parent_path());
}

}  // namespace honeytrace::sandbox
