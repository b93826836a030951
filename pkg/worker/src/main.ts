import "./silence";
import { serve } from "./protocol";

function main(): void {
  const argv = process.argv.slice(2);
  const opts = {
    deterministic: false,
    predictorEpochs: undefined as number | undefined,
    dataRoot: undefined as string | undefined,
  };
  for (let i = 0; i < argv.length; i++) {
    switch (argv[i]) {
      case "--deterministic":
        opts.deterministic = true;
        break;
      case "--predictor-epochs":
        opts.predictorEpochs = Number(argv[++i]);
        break;
      case "--data-root":
        opts.dataRoot = argv[++i];
        break;
      default:
        process.stderr.write(`unknown flag: ${argv[i]}\n`);
        process.exit(1);
    }
  }
  serve(opts);
}

main();
