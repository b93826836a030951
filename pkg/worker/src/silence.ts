/**
 * stdout belongs to the wire protocol; anything libraries print through
 * console must land on stderr. Imported before everything else.
 */

const toStderr = (...args: unknown[]): void => {
  process.stderr.write(args.map((a) => String(a)).join(" ") + "\n");
};

console.log = toStderr;
console.info = toStderr;
console.warn = toStderr;

export {};
