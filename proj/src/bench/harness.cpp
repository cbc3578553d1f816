#include "apr/bench/harness.hpp"

#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

#include "apr/error.hpp"

namespace apr::bench {

namespace {
constexpr int kBarrierTagBase = 9900;
}

void barrier(Runtime& rt) {
  const int np = rt.size();
  const int me = rt.rank();
  if (np == 1)
    return;
  int round = 0;
  for (int mask = 1; mask < np; mask <<= 1, ++round) {
    const int dst = (me + mask) % np;
    const int src = (me - mask + np) % np;
    auto send = rt.isend({}, dst, kBarrierTagBase + round, rt.world());
    auto recv = rt.irecv({}, src, kBarrierTagBase + round, rt.world());
    rt.wait(recv);
    rt.wait(send);
  }
}

void send_blocking(Runtime& rt, std::span<const std::byte> data, int dest, int tag) {
  auto r = rt.isend(data, dest, tag, rt.world());
  rt.wait(r);
}

Status recv_blocking(Runtime& rt, std::span<std::byte> buf, int source, int tag) {
  auto r = rt.irecv(buf, source, tag, rt.world());
  return rt.wait(r);
}

void run_in_process(const InProcessJobOptions& options, const RankFn& fn) {
  std::vector<Endpoint> endpoints;
  std::vector<TcpListener> listeners;
  std::shared_ptr<ChannelHub> hub;

  if (options.backend == MeshBackend::Channel) {
    hub = std::make_shared<ChannelHub>(options.size);
  } else {
    // Bind every rank's listener up front so the full endpoint list is known
    // before any rank starts connecting.
    for (int r = 0; r < options.size; ++r) {
      listeners.push_back(TcpListener::bind("127.0.0.1", 0));
      endpoints.push_back({r, {"127.0.0.1", listeners.back().local_port()}});
    }
  }

  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(options.size));
  for (int r = 0; r < options.size; ++r) {
    threads.emplace_back([&, r] {
      try {
        JobSpec job;
        job.rank = r;
        job.size = options.size;
        job.backend = options.backend;
        job.endpoints = endpoints;
        job.hub = hub;
        job.config = options.runtime_config;
        if (options.backend == MeshBackend::Socket)
          job.listen_fd = listeners[static_cast<std::size_t>(r)].release();
        auto runtime = Runtime::init(job, ThreadLevel::Multiple);
        ProgressShim shim(std::move(runtime), options.shim_config);
        RankContext ctx{shim, options.seed};
        fn(ctx);
        if (!shim.finalized())
          shim.finalize();
      } catch (...) {
        errors[static_cast<std::size_t>(r)] = std::current_exception();
      }
    });
  }
  for (auto& t : threads)
    t.join();
  for (auto& e : errors)
    if (e)
      std::rethrow_exception(e);
}

void CsvWriter::comment(const std::string& key, const std::string& value) {
  lines_.push_back("# " + key + "=" + value);
}

void CsvWriter::header(const std::vector<std::string>& columns) {
  if (header_written_)
    return;
  header_written_ = true;
  std::ostringstream line;
  for (std::size_t i = 0; i < columns.size(); ++i)
    line << (i ? "," : "") << columns[i];
  lines_.push_back(line.str());
}

void CsvWriter::row(const std::vector<std::string>& fields) {
  std::ostringstream line;
  for (std::size_t i = 0; i < fields.size(); ++i)
    line << (i ? "," : "") << fields[i];
  lines_.push_back(line.str());
}

std::string CsvWriter::str() const {
  std::ostringstream out;
  for (const auto& line : lines_)
    out << line << '\n';
  return out.str();
}

void CsvWriter::write_file(const std::string& path) const {
  std::ofstream out(path);
  if (!out)
    throw UsageError("cannot write CSV to '" + path + "'");
  out << str();
}

} // namespace apr::bench
