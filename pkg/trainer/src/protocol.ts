/**
 * NDJSON wire-protocol transport: one JSON object per LF line over either a
 * spawned `vrsim --serve --stdio` subprocess or a TCP socket.
 */
import { spawn, type ChildProcess } from "node:child_process";
import net from "node:net";

export const PROTO_VERSION = 1;

export interface Message {
  type: string;
  seq: number;
  [key: string]: unknown;
}

export function encodeLine(msg: Record<string, unknown>): string {
  return JSON.stringify(msg) + "\n";
}

export function decodeLine(line: string): Message {
  const msg = JSON.parse(line);
  if (typeof msg !== "object" || msg === null || Array.isArray(msg)) {
    throw new Error("protocol message must be a JSON object");
  }
  if (typeof msg.type !== "string" || typeof msg.seq !== "number") {
    throw new Error(`malformed protocol message: ${line.slice(0, 120)}`);
  }
  return msg as Message;
}

/** Reassembles LF-delimited lines from stream chunks. */
export class LineBuffer {
  private partial = "";

  push(chunk: string): string[] {
    const data = this.partial + chunk;
    const lines = data.split("\n");
    this.partial = lines.pop() ?? "";
    return lines.filter((l) => l.length > 0);
  }
}

export interface Transport {
  send(msg: Record<string, unknown>): void;
  /** Resolve the next inbound message (FIFO); rejects on EOF/close. */
  recv(): Promise<Message>;
  close(): Promise<void>;
}

/** Shared inbox wiring for both transports. */
class Inbox {
  private queue: Message[] = [];
  private waiters: Array<{ resolve: (m: Message) => void; reject: (e: Error) => void }> = [];
  private closed: Error | null = null;
  private lineBuffer = new LineBuffer();

  feed(chunk: string): void {
    for (const line of this.lineBuffer.push(chunk)) {
      const msg = decodeLine(line);
      const waiter = this.waiters.shift();
      if (waiter) waiter.resolve(msg);
      else this.queue.push(msg);
    }
  }

  fail(err: Error): void {
    this.closed = err;
    for (const w of this.waiters.splice(0)) w.reject(err);
  }

  next(): Promise<Message> {
    const queued = this.queue.shift();
    if (queued) return Promise.resolve(queued);
    if (this.closed) return Promise.reject(this.closed);
    return new Promise((resolve, reject) => this.waiters.push({ resolve, reject }));
  }
}

export class StdioTransport implements Transport {
  private proc: ChildProcess;
  private inbox = new Inbox();

  constructor(command: string, args: string[], cwd?: string) {
    this.proc = spawn(command, args, { cwd, stdio: ["pipe", "pipe", "inherit"] });
    this.proc.stdout!.setEncoding("utf-8");
    this.proc.stdout!.on("data", (chunk: string) => this.inbox.feed(chunk));
    this.proc.on("exit", (code) => this.inbox.fail(new Error(`env server exited (code ${code})`)));
    this.proc.on("error", (err) => this.inbox.fail(err));
  }

  send(msg: Record<string, unknown>): void {
    this.proc.stdin!.write(encodeLine(msg));
  }

  recv(): Promise<Message> {
    return this.inbox.next();
  }

  async close(): Promise<void> {
    this.proc.stdin?.end();
    if (this.proc.exitCode === null) {
      await new Promise<void>((resolve) => {
        const timer = setTimeout(() => {
          this.proc.kill();
          resolve();
        }, 3000);
        this.proc.once("exit", () => {
          clearTimeout(timer);
          resolve();
        });
      });
    }
  }
}

export class TcpTransport implements Transport {
  private sock: net.Socket;
  private inbox = new Inbox();

  constructor(host: string, port: number) {
    this.sock = net.createConnection({ host, port });
    this.sock.setEncoding("utf-8");
    this.sock.on("data", (chunk: string) => this.inbox.feed(chunk));
    this.sock.on("close", () => this.inbox.fail(new Error("connection closed")));
    this.sock.on("error", (err) => this.inbox.fail(err));
  }

  send(msg: Record<string, unknown>): void {
    this.sock.write(encodeLine(msg));
  }

  recv(): Promise<Message> {
    return this.inbox.next();
  }

  async close(): Promise<void> {
    this.sock.end();
    this.sock.destroy();
  }
}

/** Spawn the Python environment server over stdio. */
export function spawnEnvServer(configPath: string | null, repoRoot: string, python = "python3"): StdioTransport {
  const args = ["-m", "vrsim.cli", "--serve", "--stdio"];
  if (configPath) args.push("--config", configPath);
  return new StdioTransport(python, args, repoRoot);
}
