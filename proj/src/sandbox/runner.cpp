#include "honeytrace/sandbox/runner.hpp"

#include <sstream>
#include <thread>

namespace honeytrace::sandbox {

namespace {

constexpr std::size_t kChunk = 16 * 1024;

std::string hex_addr(std::uint64_t a) {
    std::ostringstream out;
    out << "0x" << std::hex << a;
    return out.str();
}

std::vector<std::string> split_words(const std::string& s) {
    std::istringstream in(s);
    std::vector<std::string> out;
    for (std::string w; in >> w;) out.push_back(w);
    return out;
}

class Runner {
public:
    Runner(SessionContext& ctx, SessionChannel* channel) : ctx_(ctx), channel_(channel) {}

    ScriptRun run(const AttackScript& script) {
        const auto before = ctx_.sink.events().size();
        for (const auto& step : script.steps) {
            if (step.kind != StepKind::write_file && step.kind != StepKind::delete_file) flush();
            try {
                execute(step);
            } catch (const std::exception& e) {
                fail(step, e.what());
            }
        }
        flush();
        for (const auto& [trace_id, n] : result_.trace_events) ctx_.tracer.seal(trace_id);
        auto all = ctx_.sink.events();
        result_.events.assign(all.begin() + static_cast<std::ptrdiff_t>(before), all.end());
        return std::move(result_);
    }

private:
    void flush() {
        if (ctx_.watcher) ctx_.watcher->flush();
    }

    void fail(const Step& step, const std::string& detail) {
        ++result_.failed_steps;
        ctx_.sink.emit({EventKind::system, ctx_.session_id,
                        json{{"what", "step_failed"},
                             {"step", std::string(to_string(step.kind))},
                             {"line", step.line},
                             {"detail", detail}},
                        std::nullopt});
    }

    Bytes resolve(const ByteArg& arg) {
        if (!arg.from_env()) return arg.bytes;
        auto content = ctx_.env->read_file(arg.env_path);
        if (!content) throw NotFound("no such file: " + arg.env_path);
        return *content;
    }

    void execute(const Step& step) {
        switch (step.kind) {
            case StepKind::send:
            case StepKind::expect: {
                if (!channel_) throw Error("no attacker connection");
                const auto bytes = resolve(step.bytes);
                const bool inbound = step.kind == StepKind::send;
                const auto got = inbound ? channel_->to_env(bytes) : channel_->to_attacker(bytes);
                (inbound ? result_.bytes_to_env : result_.bytes_to_attacker) += got.size();
                if (got != bytes) throw Error("relay delivered different bytes");
                break;
            }
            case StepKind::write_file:
                ctx_.env->write_file(step.path, resolve(step.bytes));
                break;
            case StepKind::delete_file:
                if (!ctx_.env->delete_file(step.path)) throw NotFound("no such file: " + step.path);
                break;
            case StepKind::exec: exec(step); break;
            case StepKind::connect_out: connect_out(step); break;
            case StepKind::sleep:
                std::this_thread::sleep_for(step.duration);
                if (ctx_.watcher) ctx_.watcher->poll(Clock::process().now());
                break;
            case StepKind::trace: trace(step); break;
        }
    }

    void exec(const Step& step) {
        const auto argv = split_words(step.command_line);
        const auto path = ctx_.env->resolve_command(argv.at(0));
        if (!path) {
            ctx_.tracer.on_exec(ctx_.session_id, ctx_.env->template_id(), step.command_line, {}, "", ctx_.sink,
                                argv[0] + ": No such file or directory");
            ++result_.failed_steps;
            return;
        }
        const auto image = ctx_.env->read_file(*path).value_or(Bytes{});
        const int pid = ctx_.env->spawn(step.command_line, *path, image);
        const auto ev = ctx_.tracer.on_exec(ctx_.session_id, ctx_.env->template_id(), step.command_line, image,
                                            ctx_.env->process_ref(pid), ctx_.sink);
        if (ev.trace_id) {
            traced_ = {*ev.trace_id, pid};
            result_.trace_events.emplace(*ev.trace_id, 0);
        }
    }

    void connect_out(const Step& step) {
        const auto payload = resolve(step.bytes);
        const auto reply = resolve(step.reply);
        const Endpoint local{ctx_.env->net_identity(), next_port_++};
        ctx_.sink.emit({EventKind::system, ctx_.session_id,
                        json{{"what", "outbound_connection"},
                             {"source", local.str()},
                             {"destination", step.destination.str()},
                             {"bytes_out", payload.size()},
                             {"bytes_in", reply.size()}},
                        std::nullopt});
        if (!ctx_.hub) return;
        netcap::TcpFlowSynth flow(local, step.destination, ctx_.env->net_identity());
        auto& clock = Clock::process();
        for (const auto& p : flow.open(clock.now())) ctx_.hub->publish(p);
        for (const auto& p : flow.data(true, payload, clock.now())) ctx_.hub->publish(p);
        if (!reply.empty())
            for (const auto& p : flow.data(false, reply, clock.now())) ctx_.hub->publish(p);
        for (const auto& p : flow.close(true, clock.now())) ctx_.hub->publish(p);
    }

    void trace(const Step& step) {
        if (!traced_) throw Error("no traced process");
        const auto& [trace_id, pid] = *traced_;
        for (const auto& op : step.trace) {
            tracer::TraceEvent ev;
            ev.kind = op.kind;
            ev.address = op.address;
            ev.size = op.size;
            ev.data = op.data;
            switch (op.kind) {
                case tracer::TraceKind::instruction: ev.detail = op.detail; break;
                case tracer::TraceKind::mem_read:
                    ev.detail = "read " + std::to_string(op.size) + " @" + hex_addr(op.address);
                    break;
                case tracer::TraceKind::mem_write:
                    ev.detail = "write " + std::to_string(op.size) + " @" + hex_addr(op.address);
                    try {
                        ctx_.env->write_memory(pid, op.address, op.data);
                    } catch (const Error& e) {
                        fail(step, e.what());
                        continue;
                    }
                    break;
            }
            ctx_.tracer.consume(trace_id, std::move(ev));
            ++result_.trace_events[trace_id];
        }
    }

    SessionContext& ctx_;
    SessionChannel* channel_;
    ScriptRun result_;
    std::optional<std::pair<std::string, int>> traced_;
    std::uint16_t next_port_ = 40000;
};

}  // namespace

Bytes StreamPairChannel::pass(SocketStream& from, SocketStream& to, std::span<const std::uint8_t> bytes) {
    Bytes got;
    std::uint8_t buf[kChunk];
    auto drain = [&](std::chrono::milliseconds wait) {
        if (!to.wait_readable(wait)) return false;
        const auto n = to.read_some(buf);
        if (n == 0) throw Error("connection closed mid-transfer");
        got.insert(got.end(), buf, buf + n);
        return true;
    };
    for (std::size_t off = 0; off < bytes.size(); off += kChunk) {
        from.write_all(bytes.subspan(off, std::min(kChunk, bytes.size() - off)));
        while (drain(std::chrono::milliseconds(0))) {
        }
    }
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    while (got.size() < bytes.size()) {
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0 || !drain(left)) throw Error("relay stalled");
    }
    return got;
}

DirectChannel::DirectChannel(netcap::CaptureHub* hub, Endpoint attacker, Endpoint service, Ipv4 env_identity)
    : hub_(hub), flow_(attacker, service, env_identity) {}

DirectChannel::~DirectChannel() { close(); }

void DirectChannel::publish(const std::vector<netcap::PacketRecord>& packets) {
    if (!hub_) return;
    for (const auto& p : packets) hub_->publish(p);
}

Bytes DirectChannel::to_env(std::span<const std::uint8_t> bytes) {
    if (!opened_) publish(flow_.open(Clock::process().now()));
    opened_ = true;
    publish(flow_.data(true, bytes, Clock::process().now()));
    return Bytes(bytes.begin(), bytes.end());
}

Bytes DirectChannel::to_attacker(std::span<const std::uint8_t> bytes) {
    if (!opened_) publish(flow_.open(Clock::process().now()));
    opened_ = true;
    publish(flow_.data(false, bytes, Clock::process().now()));
    return Bytes(bytes.begin(), bytes.end());
}

void DirectChannel::close() {
    if (!opened_ || closed_) return;
    closed_ = true;
    publish(flow_.close(true, Clock::process().now()));
}

ScriptRun run_attacker_script(SessionContext& ctx, const AttackScript& script, SessionChannel* channel) {
    return Runner(ctx, channel).run(script);
}

void run_sim_shell(SessionContext& ctx, SocketStream& stream, const Bytes& banner) {
    auto say = [&](std::string_view s) { stream.write_all(s); };
    auto flush = [&] {
        if (ctx.watcher) ctx.watcher->flush();
    };
    try {
        if (!banner.empty()) stream.write_all(banner);
        say("$ ");
        std::string pending;
        std::uint8_t buf[4096];
        std::vector<std::string> traces;
        for (;;) {
            const auto n = stream.read_some(buf);
            if (n == 0) break;
            pending.append(reinterpret_cast<const char*>(buf), n);
            if (pending.size() > 64 * 1024) pending.erase(0, pending.size() - 64 * 1024);
            bool done = false;
            for (auto nl = pending.find('\n'); nl != std::string::npos && !done; nl = pending.find('\n')) {
                std::string line = pending.substr(0, nl);
                pending.erase(0, nl + 1);
                if (!line.empty() && line.back() == '\r') line.pop_back();
                auto words = split_words(line);
                if (words.empty()) {
                    say("$ ");
                    continue;
                }
                const auto& cmd = words[0];
                try {
                    if (cmd == "exit" || cmd == "logout") {
                        done = true;
                        break;
                    } else if (cmd == "ls") {
                        const std::string dir = words.size() > 1 ? fsvault::normalize_path(words[1]) : "/";
                        const auto prefix = dir == "/" ? dir : dir + "/";
                        std::set<std::string> names;
                        for (const auto& [p, b] : ctx.env->root())
                            if (p.starts_with(prefix)) names.insert(p.substr(prefix.size(), p.find('/', prefix.size()) - prefix.size()));
                        for (const auto& name : names) say(name + "\n");
                    } else if (cmd == "cat" && words.size() > 1) {
                        const auto content = ctx.env->read_file(words[1]);
                        if (!content) say("cat: " + words[1] + ": No such file or directory\n");
                        else stream.write_all(*content);
                    } else if (cmd == "echo") {
                        const auto redirect = line.find('>');
                        if (redirect == std::string::npos) {
                            say(line.size() > 5 ? line.substr(5) + "\n" : "\n");
                        } else {
                            auto target = split_words(line.substr(redirect + 1));
                            auto text = line.substr(5, redirect > 5 ? redirect - 5 : 0);
                            while (!text.empty() && text.back() == ' ') text.pop_back();
                            if (target.empty()) say("sh: syntax error\n");
                            else ctx.env->write_file(target[0], to_bytes(text + "\n"));
                        }
                    } else if (cmd == "rm" && words.size() > 1) {
                        if (!ctx.env->delete_file(words[1]))
                            say("rm: cannot remove '" + words[1] + "': No such file or directory\n");
                    } else if (const auto path = ctx.env->resolve_command(cmd)) {
                        flush();
                        const auto image = ctx.env->read_file(*path).value_or(Bytes{});
                        const int pid = ctx.env->spawn(line, *path, image);
                        const auto ev = ctx.tracer.on_exec(ctx.session_id, ctx.env->template_id(), line, image,
                                                           ctx.env->process_ref(pid), ctx.sink);
                        if (ev.trace_id) traces.push_back(*ev.trace_id);
                    } else {
                        flush();
                        ctx.tracer.on_exec(ctx.session_id, ctx.env->template_id(), line, {}, "", ctx.sink,
                                           cmd + ": command not found");
                        say("sh: " + cmd + ": command not found\n");
                    }
                } catch (const Error& e) {
                    say(std::string("sh: ") + e.what() + "\n");
                }
                say("$ ");
            }
            if (done) break;
        }
        flush();
        for (const auto& id : traces) ctx.tracer.seal(id);
    } catch (const Error&) {
        flush();
    }
    stream.shutdown_write();
}

}  // namespace honeytrace::sandbox
