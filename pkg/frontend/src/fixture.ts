/**
 * In-memory stand-in for the experiment service, for developing the page
 * without a running backend (enable with ?fixture=1).  It follows the same
 * request sequence as the real API: a fixed 8-trial session over one
 * embedded stimulus, patches acknowledged with server-style coordinates,
 * choices scored against an arbitrary fixed truth.  The patch artwork is a
 * constant disk rather than a crop of a sharp image; only the real service
 * can cut pixels from the hidden stimulus.
 */

import { ApiError } from "./api.js";
import type {
  ChoiceReply,
  ClickReply,
  SessionSummary,
  TrialOrDone,
} from "./api.js";
import type { ApiLike } from "./controller.js";

const FIXTURE_SIZE = 64;
const FIXTURE_RADIUS = 6;

const BASE_PNG_B64 =
  "iVBORw0KGgoAAAANSUhEUgAAAEAAAABACAIAAAAlC+aJAAATi0lEQVR42k2a144cNxeEu8nOuSesZAEG/ASGgbUtK8BwuJAB" +
  "P47febG7EzuyI/u/+PQT0oUgjGa6yROq6hRp//fff1LKNE3jOI6iyLIs27Ydx8myLAzDeZ7HcXQcpyzLYRjatg3DcBgGy7K0" +
  "1vM8SymHYVBKWZa1ruvpdLJtu+u6bdvquhZCjOM4jmPf91rrYRimafI8r+u6JEmWZbndbmmajuMYBIEQQimVZZnjOEmSjONY" +
  "luU8z3EcSymPx6Nt27vdbp7nIAg8z1vXNQgCkaap53lSyvX/f6SUnucty1JVlZSStV6vV8dxgiCYpmnbNr6wLItlWeM4CiFY" +
  "XxiGURRJKcdxXNdVa621llLyHCGE67qWZbmuO46j7/t5nnddV5alEGKe591ux6OUUrZtL8uSpqllWWyv67qmaeZ57rqu6zoe" +
  "K9q2FUJIKYUQxF5KGYYhL9u2zbZt13WTJFnXNY5j13W11mEYpmnK933f7/t+Xddt26IoappGCOF5XhiGy7I4juO6ru/7bMZ1" +
  "3Xmet21jiVJK13WXZfF9fxiGYRi01kEQ8Cu2muf5NE232+3t27d8wfM8kmBZlvztt9/CMLRtO03TaZoIMHXS971ZStu2LJ2K" +
  "chxn2zYqREq5bZvWepomFkdcPc9zHGcYBinl6XQKgsD3/cvlIoSI49iyLCpNCOE4DstixazH933btpVSy7IkSeK6Lt/nt7Zt" +
  "a60dxxG+75MBEy3ya1lWnudhGI7jeD6f4zie55lVRlFEPyilqBw2liQJGbvf703TLMtCb0zTFASB67rDMFDQy7LwyTRNcRwr" +
  "pTzPowS01uu6mrQcDgfHcbquoyY9zyPKjuPUdd11nYjjmJ9N0+S6LqFt29ayrL7vm6YhIdRcVVXUFb3o+z4/GYaBCBGwYRgI" +
  "qhBi27Z5nh3HmaZJSun7PgkkxkEQsCv+VynVdR1dR6Spgm3bSILnea7rBkFg2zb1LH/66SfLspIkYU0k1Pf9cRzDMOTR9JNt" +
  "2/M8J0lS13Xf92DUNE3fNqvrurZtb9vGInglqaMwqArbtkGLYRiKoti2jR1mWbbf77uuo2vneY6iSGtdFIVlWY7j0HhBEBDQ" +
  "MAxFHMdCCMp3HMe6rud57vvesiwKmlUSqizLiFAYhuu6LsvC30op0koB0BVSyq7raCrHcfimlDLLMt/3syyjnbZt830/SZI8" +
  "z33f77quKArHcSi/eZ5d131+fl7X1bKsuq6XZRnHkWcOwyC6rgMNlmUBpIIgoJSHYTifz33f8++mac7nM0WyLAuZAYjoKj5f" +
  "1/V+v9PcQRDQakBtHMdBEFiWRQcfDoc3b94sy7Jt2zAM8zzfbjeqoO97x3GapomiSAix2+2gHcuylmVhV195gJ01TWPb9jRN" +
  "SZKcz2e+Os+zECIMQ17JgiCscRynabper/QWVNi27bZtNCiLBp3CMDwej1QO797v92VZsqZ5nn3f37YtCIL9fh/HcRzHZVlm" +
  "WXY4HEgayWefURQBmDCJ/PPPP4G8/X7veZ5t25CAeTSp5B3TNNGaQoj7/e55HrCglOr73sDcPM/EhczM80ynep43DAPQCU9b" +
  "lhXHsdbasiy6BdqGT+I4hpeklNM0AZhA1jRNRVF0XSc/fPiQJEkYhrfbjZDYts27t22DvMhp27YQOIBr23bbtn3f+74P8JE0" +
  "rTW7HcfRoHUQBHQRSM+HIBidKoRY1zVNU8dxjscjCVnXFbBaliWOY7YURdG6rmCuUsoBQyDRbdtAyaZpwHVCzg9YAah6u90I" +
  "9u12O51OeZ4DnWEYaq2pJSgchCCx1+s1jmMwqm3bOI7XdaWPoQXbtsuyrOs6CAL4i0DA3FmW0Z9KKZhbCCH/+OMPWINKADp8" +
  "34fCPM/TWmdZprWmZrTWCAcpJemi2OC1dV0puTzP4biu64QQwzBcr9c8z+nmPM+XZdFag7lAlu/70zSx+XVdKRjThGEY8s37" +
  "/V4URdu2NLH88OFDFEXzPC/LQnbyPCfLvMB13aqqoEwYlxgjN7quI0VFUVCgZVlKKa/Xa1VVZVnyBCllWZbUjNZ6WRaImdYM" +
  "wxAOCYKA5kbCsESlFD8Ei7MssyxLKUUC5efPn5ErFDG5a9uWpkEm8L+IZ7LEollK13WAOoCIDCHMdDNKzrZtGpeallISkSzL" +
  "eDIKgNK1bZv6obZZWF3XVLihxWVZvmaArgL7AH4QIwgCFkHZALWky3VdFpRlGUThui59RvH0fU9h2LZtRCElJKUk7fy92+3Y" +
  "UhAEYRhSaewKGIRPYHeYcRgGZIX8/PmzaTu6GW4C4F3XvVwuUDIiB25GtYNXfd8bbQzqEWZQxbIs4IE/iBT4JIoi2gxYhN1J" +
  "L81qFJGUkigAJ6aJp2mS//zzD0Vi9oSSM71vZFaapvADSoYBAI0EWC3LAuZEUaSU+nbAoNeBKd/3fd9nA2EYUpzkOYoiz/Mu" +
  "lwsTiOd5NADYTSdM08TyGNYcmBVlS4PyJeQQxE7xVFVF9lk9wMqjTaeal8FWMAYNA+TDlfwvm/Q8L4oiMBT6y7IsSRImBOLI" +
  "D0FqWJVwN00jf/75Z+hGKQX1IIpIC1IWLgTIUYVd15EKpi1AjVSAFUxw3w6QURSxxDzPpZRJklDiPFBrnabpMAx5nvMTMkxd" +
  "UVpSysvlQlnWdf01ve/fv6cSUOe0CGKGFVRVRdN0XcebYCtev67r9XpNksT3feJE1FG1Zp6k/yDaKIqIkUmOqW9GZ9rAtu2m" +
  "aZRSdA46JQxD6oq5fBxH+fvvvxvBQ7k3TQPmrOvKflCdUFgQBKfTidcgLtI0RczSi1QdYyvNw2xZliWPotd932ehSZJkWda2" +
  "LcBKdTGpx3EMnWEXIIQNBWFqCIB/mqamacDaPM+FELfbDZLHJun7HoJ8fn4GPQheXdf3+/3p6QnXAPxllAGLUPnftp1hA5wB" +
  "skfR81jaIE1T2Noowjdv3tADz8/PKD/P8+SXL1+01l3XUa9CiOv1ik10vV5hFqJlgNVUFAM4qDeOYxzHCAfUDrqafyAHAN+i" +
  "KMB4dosCaJoGcyWKorZtkySpqgq2ohaYY8ZxpFhoesuy5C+//IJGZxukxphCaGNK83q9UicwC4QKFtG+dFWapvAJjQRo8LUw" +
  "DKl7qDNJEjr4fD5///33QMI8z2RGKUUJoCwY2ZVSeEdN07BCB/WG8DQDB8Hbts1ElFLmEaguXCd+pZTa7/e8vu97ip6WQPRn" +
  "Wdb3Pf0dhiEPZyy0bZvBhcSWZfn09NS2LXsAr9nnMAy2bd9uN5JGW8r379+HYXg6ncgpmWJXJKvrOmoAaQDpGr8NUyTLMt5E" +
  "ySJs2DkYT/jJOwVJbcDErBWSYaYlcMYZICgEjg+3bbtcLuM4ys+fP/NKRhNCa6oTcIDsWDpIBWNAHUQ9y7KvXp8QaZqaUV0I" +
  "kSQJGgTYAYj7vt/tdsbAQwgBetQzWUJgK6WSJHl5eaGGjS27bZt8//69KV/Cj+hTSl0ul/1+b9wHQ2rUtxBiv9+TCtxVok4e" +
  "oij61hzACyH8xMsMUhA/UzjoDkWyKgKUZVld1+Dvtm1PT0/Mfff7/WsL9n3PzGHb9n6/h4aYxNHVfIIjAMguy/L6+sq4CEWA" +
  "g8bwMfE2hI1qKIqCwDNntm1LONgAwxCiFewiMxQS0fzhhx/QbGEYCmxnpgS8KibXJElwdaIoYupHVHqex1pxy/gOoMQTaOUo" +
  "iig2SIeCbJrG2NqQNLzG5O15XhzHxBFNbsQSieWZXddVVQV3zfMsjscjDzWam92TXJAnjmNibySqcW35N/rMcRzUL++jeLTW" +
  "+/2eSkBNUXIgjPz/H4QDgpKF0oGgIq9e1xVr8H6/Q/NSSvnp0yesKBgHOGN+pwaen59pKca0tm2/++47Zh3AjgIjClQqghky" +
  "xlDBY1zXFYznCAO5amxdMLAoCuAEGCA/FDmQhXDGkzyfz4KaMfMAWHa9XrHO53lm2IWPUTin0wnPFKcWyKLQHccRQnCcg7o+" +
  "Ho/shBMX4GFdVyN4lVLDMKzr2nUdBMeiKVQzOXmedzweMYhgwNfX1yzLBCFnnAewhmF4eHgAgI2dyNYxAJMkwfMyyo8X0GHs" +
  "DbEOh7Rty4zb9z2pbtvWuBJYyJzTAEFoh91uxzaapqGXmqZhKOUL0K4A75DKxr9G1t9ut8PhUJYlAnjbNrJBYUAOqHb4Ls/z" +
  "NE2RfYAg3jWAg1tzOBzYLQiLJ4A/Z2Y9Fs35FZ80TcPOb7ebMYmpBfn4+Ag1sCYCA0iZsyNzhmdcNzQcchewM34lI4jxVTmo" +
  "o/zASjqH6icolLs5WCiKguhSRaYy2SGCijgmSSL//fffy+VihgnP89grVQvMI1TNqYR5H14iDwWOkCiAYFEU2JLwI31vjt4Y" +
  "gDBBWCth4tQHJDROGSdgQLY5+OE0RLy8vERRhPeCOYelum0bpwkYwiQOvy1N0/P5zIzP9k6nE4ANN1PWlmVVVYWPbeCFhlFK" +
  "MRUEQVAUBSDOSIAcGsexaRqsIdDy9fXV2If8L5mXj4+PyARkD99gjibqeKCUOI4IJgKNBW+kaUqhY2siPOFU8BGYQsFThzz8" +
  "fr+TQ6xiYwXwcwZAfgKNQjhFUazrSmQF0LZt2+FwwG+CI7CraK+qqg6HAwlFdBwOBzpea03v4sn1fY8dAtLBG1Qg0tocl9BF" +
  "jCwcKzG7wWhGb1NOaE88C6ZwdqiUEpC/OZ6hDYgrnQT+YMtEUcSMYg6iWYGxy7MsM+YXLUERM/pgwnHucj6fgddt2xDzWBt0" +
  "PzqHboYcdrsd7iUONuWntZY//vijUYigELMv2SCuNBzlyDcPhwNoYzQPXw6CgIkUGIChwQ1zXm+GCsuyIBZOZul1eglUpKpp" +
  "ceNJgqFGxchPnz4RbD4FK8kDSwc3SDT4Bema2QA/GRMXn5n6RiNyOIs5TtKMyQVomnOAJEk4l8BEM/Pg/X4H1o35hWeBlSbS" +
  "NC3LkmBQoLxbSsnNCsCbOsE++ta6MVYz+sy4dGBu0zSYXIgZ9kl6iQXZfn19HcfxdrtxhHE6nYxwIsksF4MM5QvIOo4jMFT4" +
  "BiwGQ1GIGDj0HEaikUCWZb19+5ZPYO4sy5hWGakgaaYno8OBeaAQXQRGESMuvsB9JIcIEhGEKqfICIpt2+THjx+11sAfCfr2" +
  "KA5sJhXjOB6Px3Ecd7sdXq9SKs9zjB1zrMKx/jzPHMOwOLoTKW76Ch/JXA7hYAHKw2sDuEwV0BLIRHBZay3/+usvhBH6FuVI" +
  "1ihcYNuM4cgbupbPwSLGbTCA6mJq4UgdvWgOFjjsqKoKKw6y43OlVBRFWMswAA1NgMwBIbojz3PHVC0MAid0XYeFBiszf2HI" +
  "cBeBWcxYFdQVp9PsnKCwAhAJmwMMwNJ5eHi43+9mXMYJpV+ZhJC9AIw59ObqjDHLHMJpDojYHJMkriNwDrwg+BzHYd15nvNv" +
  "MwDleY5QybLscrlw/QoLlcY1wwprouqYDYy2JQlkoGmaNE3xWjAeYQDWHIah/PLly+l0wg3XWoNfkCKTuGkyUoHxjRWFtuF2" +
  "kJnCECOkgpNQTsGwTEAtypdfGYgz97mABCY+skcLua7LAMhSGXTlx48faSBgy3GcPM859kG3UVSsrGma4/EIkJmjJAZOxgAK" +
  "AHxEmYEekDpgbU67GHmjKHp5eQGRWD2TE5k/n8+m6c09C0oaF0v++uuvxvVnD6yVxcEMyH3UKO3F6QHyeLfbDcOAJcqfd+/e" +
  "XS4XQxGgsAmzuVzFe4k3D2SHTA70AyiEYuXaF9KTz33fF6AbdxQRM3i/cDjnJQgV2O3du3doT2YUpBX3edhSFEW3260sS6UU" +
  "Po3W+vX1FYS53+8EngNm/FAKCVSlosAutpQkCSY5t70MtRVF4bquY86RjKdneM5QrAEfqJ4bBpiV5r4i7h+phzQoVpxWyAGY" +
  "gtrASjbZti3ddblcmI3MKSNwiVsMqPCh0ary77//ZgOkkkICNIgf4xXksG3bfr8HcAgMmgL9DEswKvAygMXzvKqquI5JlbND" +
  "lkij0+JsmALDROFp5tyRAWNd17IsUaOC+mEC5HjUzKae57179w6jATJP0/R2uwFkNAZbJWCcjZJSlI+pB9bddV1d1+YuFFaS" +
  "67rn85nqNwebeFB0C1rY930mRPiO5ydJIuZ5BvXMBQS+gT1xOp0gCi7aQsDszRxyITNR88QbmDeTHZ3NyRqtMgwDYyE7NEe3" +
  "tB9fcxynqipGQnMb0Vx8YWRv21aA9Gmavry8MEY9PDwwNwLMYRjibzKtQ/5MKhQPbtd+v2etNBJFwlKMJuOACC3AVCWEqKqK" +
  "GJMrcNaIH+ASeQ+g8XZT5PLx8ZHe3+120BsTnZlR8jznMoqUsq5rFAiXqhiXYS5z/2ee57IsjfdU1zXAwPwFitd1TSyZUfkc" +
  "qkKHswckME9umgbYAd9QnF+vnFEt+FNpmlIGRNrcLcS4NccK5J2nGLFuJqHT6UQp4wZ4nmeEJBtGdYM2BJW3K6W4egTy0Kam" +
  "VTCx2Q8s7nmefHx8zPOcOjMMwJUhXD4eja6GmDltNif1TL3zPO/3e+4rUq9SSoYpI1SZwoxNRq9TLWAuMEh5MF4z3TOXGieC" +
  "Tzg3ECjKb2mSq+9QCWfGQKRlWZfLhfkV1GPMM5cjLpeLOdzm6XQbRQ/NUeUUOj1D1RkWg7M4uqRrgVpujBZFgU/Bmg+Hw/8A" +
  "siZgpnoKXlwAAAAASUVORK5CYII=";

const PATCH_PNG_B64 =
  "iVBORw0KGgoAAAANSUhEUgAAAA0AAAANCAYAAABy6+R8AAAATklEQVR42mN8vcqGAQf4z8DAwIhNggWLQlx8uAFMeDQw4DKA" +
  "iUgNKBqZGMgAZGv6T6Ke/0y4ghUPYKSvnxhIcCIjuk2MxGjAlowYiUl7AGmSC+8cA1aoAAAAAElFTkSuQmCC";

const LABELS = [
  "neutral", "happy", "sad", "surprise", "fear", "disgust", "anger", "contempt",
] as const;

const N_TRIALS = 8;
const BLOCK_COUNT = 2;

interface FixtureTrialState {
  trueLabel: string;
  falseLabel: string;
  clicks: number;
  firstClickMs: number | null;
  closed: boolean;
}

export class FixtureApi implements ApiLike {
  private sessions = new Map<
    string,
    { summary: SessionSummary; cursor: number; trials: FixtureTrialState[] }
  >();
  private counter = 0;

  async createSession(
    participantCode: string,
    stimulusSetId: string,
    seed?: number,
  ): Promise<SessionSummary> {
    this.counter += 1;
    const id = `fixture-${this.counter}`;
    const summary: SessionSummary = {
      session_id: id,
      participant_code: participantCode,
      stimulus_set_id: stimulusSetId,
      seed: seed ?? 0,
      n_trials: N_TRIALS,
      block_boundaries: [N_TRIALS / BLOCK_COUNT],
      block_count: BLOCK_COUNT,
      created_at: new Date().toISOString(),
      cursor: 0,
    };
    const trials: FixtureTrialState[] = [];
    for (let i = 0; i < N_TRIALS; i++) {
      trials.push({
        trueLabel: LABELS[i % LABELS.length]!,
        falseLabel: LABELS[(i + 3) % LABELS.length]!,
        clicks: 0,
        firstClickMs: null,
        closed: false,
      });
    }
    this.sessions.set(id, { summary, cursor: 0, trials });
    return summary;
  }

  async nextTrial(sessionId: string): Promise<TrialOrDone> {
    const s = this.require(sessionId);
    if (s.cursor >= N_TRIALS) {
      return { status: "done", completed: N_TRIALS };
    }
    const t = s.trials[s.cursor]!;
    const flip = s.cursor % 2 === 1;
    return {
      status: "trial",
      stimulus_id: `fixture_${s.cursor.toString().padStart(4, "0")}`,
      option_pair: flip ? [t.falseLabel, t.trueLabel] : [t.trueLabel, t.falseLabel],
      block_index: Math.floor(s.cursor / (N_TRIALS / BLOCK_COUNT)),
      cursor: s.cursor,
      n_trials: N_TRIALS,
      height: FIXTURE_SIZE,
      width: FIXTURE_SIZE,
      image_png_b64: BASE_PNG_B64,
    };
  }

  async sendClick(
    sessionId: string,
    stimulusId: string,
    x: number,
    y: number,
    clientMs: number,
  ): Promise<ClickReply> {
    const s = this.require(sessionId);
    const t = this.activeTrial(s, stimulusId);
    if (x < 0 || y < 0 || x >= FIXTURE_SIZE || y >= FIXTURE_SIZE) {
      throw new ApiError(400, `click (${x}, ${y}) outside image`);
    }
    t.clicks += 1;
    if (t.firstClickMs === null) t.firstClickMs = clientMs;
    return {
      x,
      y,
      patch_x0: x - FIXTURE_RADIUS,
      patch_y0: y - FIXTURE_RADIUS,
      radius: FIXTURE_RADIUS,
      ms_since_trial_start: clientMs,
      click_count: t.clicks,
      patch_png_b64: PATCH_PNG_B64,
    };
  }

  async submitChoice(
    sessionId: string,
    stimulusId: string,
    choice: string,
  ): Promise<ChoiceReply> {
    const s = this.require(sessionId);
    const t = this.activeTrial(s, stimulusId);
    if (choice !== t.trueLabel && choice !== t.falseLabel) {
      throw new ApiError(400, `choice ${choice} is not one of the offered labels`);
    }
    t.closed = true;
    s.cursor += 1;
    return {
      session_id: sessionId,
      stimulus_id: stimulusId,
      true_label: t.trueLabel,
      false_label: t.falseLabel,
      choice,
      correct: choice === t.trueLabel,
      duration_ms: t.firstClickMs === null ? null : 900,
    };
  }

  private require(sessionId: string) {
    const s = this.sessions.get(sessionId);
    if (s === undefined) {
      throw new ApiError(404, `unknown session ${sessionId}`);
    }
    return s;
  }

  private activeTrial(
    s: { cursor: number; trials: FixtureTrialState[] },
    stimulusId: string,
  ): FixtureTrialState {
    const expected = `fixture_${s.cursor.toString().padStart(4, "0")}`;
    if (stimulusId !== expected || s.cursor >= N_TRIALS) {
      throw new ApiError(409, `trial ${stimulusId} is not active`);
    }
    return s.trials[s.cursor]!;
  }
}
